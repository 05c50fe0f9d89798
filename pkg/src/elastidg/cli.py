"""Convergence-study driver and command line interface.

`run_study` executes the full pipeline per refinement level (mesh, spaces,
assembly, solve, error norms), computes observed orders, and writes CSV
and/or markdown tables following the layout of published convergence tables
(error and order columns for the displacement L2, stress L2, and broken
divergence norms, with the stress stability norm appended).

Levels are independent and may run concurrently; results are always written
in level order.  The worker count is capped by the ELASTIDG_THREADS
environment variable (default 1).  Output is deterministic apart from the
solve_seconds column, which records wall-clock time.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import (
    ConvergenceReport,
    compute_errors,
    convergence_orders,
    infsup_constant,
    kellipticity_constant,
    lifting_constant,
)
from .forms import ComplianceTensor, assemble_mass, assemble_star_gram, assemble_system
from .mesh import build_uniform_mesh, mesh_dump_text
from .problems import problem_2d, problem_3d
from .solver import SolverError, solve_saddle
from .spaces import FieldCoefficients, build_space

CSV_COLUMNS = (
    "level", "one_over_h", "h", "dofs_sigma", "dofs_u",
    "err_u_L2", "rate_u", "err_sigma_L2", "rate_sigma",
    "err_div", "rate_div", "err_star", "rate_star", "solve_seconds",
)

_DIAGNOSTIC_SEED = 1234
_DIAGNOSTIC_DOF_CAP = 4000


@dataclass(frozen=True)
class StudyConfig:
    """Configuration of one convergence study."""

    dim: int
    k: int
    levels: tuple[int, ...]
    eta: float = 1.0
    solver: str = "direct"
    output_format: str = "both"  # csv | md | both
    out: str | None = None
    diagnostics: str = "none"  # none | infsup | kell | lifting | all
    mu: float = 0.5
    lam: float = 1.0
    dump_mesh: bool = False

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        levels = tuple(int(n) for n in self.levels)
        if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError(f"levels must increase strictly, got {levels}")
        object.__setattr__(self, "levels", levels)
        if self.eta <= 0.0:
            raise ValueError("eta must be positive")
        if self.solver not in ("direct", "schur-cg", "minres-mg"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.output_format not in ("csv", "md", "both"):
            raise ValueError(f"unknown output format {self.output_format!r}")
        if self.diagnostics not in ("none", "infsup", "kell", "lifting", "all"):
            raise ValueError(f"unknown diagnostics mode {self.diagnostics!r}")


@dataclass
class LevelResult:
    n: int
    report: object
    solve_seconds: float
    solver_stats: dict = field(default_factory=dict)


@dataclass
class StudyResult:
    config: StudyConfig
    levels: list
    convergence: ConvergenceReport | None
    diagnostics: dict
    failed_level: int | None = None
    failure_message: str = ""
    csv_path: Path | None = None
    md_path: Path | None = None

    @property
    def ok(self) -> bool:
        return self.failed_level is None


def _worker_count(num_levels: int) -> int:
    cap = os.environ.get("ELASTIDG_THREADS", "1")
    try:
        cap_n = max(1, int(cap))
    except ValueError:
        cap_n = 1
    return min(cap_n, num_levels)


def _make_problem(config: StudyConfig):
    maker = problem_2d if config.dim == 2 else problem_3d
    return maker(mu=config.mu, lam=config.lam)


def solve_level(config: StudyConfig, n: int) -> LevelResult:
    """Run mesh -> spaces -> assemble -> solve -> errors for one level."""
    problem = _make_problem(config)
    mesh = build_uniform_mesh(config.dim, n)
    stress_space = build_space(mesh, "symtensor", config.k + 1)
    disp_space = build_space(mesh, "vector", config.k)
    ct = ComplianceTensor(mu=config.mu, lam=config.lam, dim=config.dim)
    system = assemble_system(stress_space, disp_space, ct, problem.f, eta=config.eta)
    solver_hints = {}
    if config.solver in ("schur-cg", "minres-mg"):
        from .forms import assemble_a

        solver_hints["stress_space"] = stress_space
        solver_hints["schur_mass"] = assemble_a(stress_space, ct, eta=0.0)
    t0 = time.perf_counter()
    sol = solve_saddle(system.A, system.B, system.F, method=config.solver,
                       stress_block_size=stress_space.dofs_per_element,
                       context=f"dim={config.dim} k={config.k} n={n}",
                       **solver_hints)
    seconds = time.perf_counter() - t0
    report = compute_errors(
        problem,
        FieldCoefficients(stress_space, sol.stress),
        FieldCoefficients(disp_space, sol.displacement),
        eta=config.eta,
        h=1.0 / n,
    )
    return LevelResult(n=n, report=report, solve_seconds=seconds, solver_stats=sol.stats)


def _run_diagnostics(config: StudyConfig) -> dict:
    wanted = config.diagnostics
    if wanted == "none":
        return {}
    out: dict = {}
    rng = np.random.default_rng(_DIAGNOSTIC_SEED)
    for n in config.levels:
        mesh = build_uniform_mesh(config.dim, n)
        stress_space = build_space(mesh, "symtensor", config.k + 1)
        if stress_space.total_dofs > _DIAGNOSTIC_DOF_CAP:
            continue
        disp_space = build_space(mesh, "vector", config.k)
        entry: dict = {}
        if wanted in ("infsup", "kell", "all"):
            from .forms import assemble_a, assemble_b

            G = assemble_star_gram(stress_space, config.eta)
            B = assemble_b(stress_space, disp_space)
            if wanted in ("infsup", "all"):
                Mu = assemble_mass(disp_space)
                entry["infsup"] = infsup_constant(G, B, Mu)
            if wanted in ("kell", "all"):
                ct = ComplianceTensor(mu=config.mu, lam=config.lam, dim=config.dim)
                A = assemble_a(stress_space, ct, config.eta)
                entry["kellipticity"] = kellipticity_constant(A, B, G)
        if wanted in ("lifting", "all"):
            entry["lifting"] = lifting_constant(disp_space, rng)
        if entry:
            out[n] = entry
    return out


def _rates_by_level(convergence: ConvergenceReport | None, key: str, count: int):
    rates = [None] * count
    if convergence is not None:
        for i, val in enumerate(convergence.orders[key]):
            rates[i + 1] = val
    return rates


def format_csv(result: StudyResult) -> str:
    lines = [",".join(CSV_COLUMNS)]
    count = len(result.levels)
    rate_u = _rates_by_level(result.convergence, "u_L2", count)
    rate_s = _rates_by_level(result.convergence, "sigma_L2", count)
    rate_d = _rates_by_level(result.convergence, "div", count)
    rate_star = _rates_by_level(result.convergence, "star", count)
    for i, lvl in enumerate(result.levels):
        r = lvl.report
        cells = [
            str(i + 1),
            str(lvl.n),
            f"{r.h:.12e}",
            str(r.dofs_sigma),
            str(r.dofs_u),
            f"{r.err_u_L2:.12e}",
            "" if rate_u[i] is None else f"{rate_u[i]:.6f}",
            f"{r.err_sigma_L2:.12e}",
            "" if rate_s[i] is None else f"{rate_s[i]:.6f}",
            f"{r.err_div:.12e}",
            "" if rate_d[i] is None else f"{rate_d[i]:.6f}",
            f"{r.err_star:.12e}",
            "" if rate_star[i] is None else f"{rate_star[i]:.6f}",
            f"{lvl.solve_seconds:.3f}",
        ]
        lines.append(",".join(cells))
    if result.failed_level is not None:
        lines.append(
            f"{len(result.levels) + 1},{result.failed_level},FAILED,"
            + result.failure_message.replace(",", ";").replace("\n", " ")
        )
    return "\n".join(lines) + "\n"


def format_markdown(result: StudyResult) -> str:
    header = (
        "| 1/h | u L2 error | order | sigma L2 error | order "
        "| div error | order | star error | order |"
    )
    rule = "|---:|---:|---:|---:|---:|---:|---:|---:|---:|"
    count = len(result.levels)
    rate_u = _rates_by_level(result.convergence, "u_L2", count)
    rate_s = _rates_by_level(result.convergence, "sigma_L2", count)
    rate_d = _rates_by_level(result.convergence, "div", count)
    rate_star = _rates_by_level(result.convergence, "star", count)

    def fmt_rate(x):
        return "---" if x is None else f"{x:.2f}"

    lines = [header, rule]
    for i, lvl in enumerate(result.levels):
        r = lvl.report
        lines.append(
            f"| {lvl.n} | {r.err_u_L2:.6g} | {fmt_rate(rate_u[i])} "
            f"| {r.err_sigma_L2:.6g} | {fmt_rate(rate_s[i])} "
            f"| {r.err_div:.6g} | {fmt_rate(rate_d[i])} "
            f"| {r.err_star:.6g} | {fmt_rate(rate_star[i])} |"
        )
    if result.failed_level is not None:
        lines.append(f"| {result.failed_level} | FAILED: {result.failure_message} | | | | | | | |")
    return "\n".join(lines) + "\n"


def format_diagnostics(diag: dict) -> str:
    lines = []
    for n in sorted(diag):
        parts = [f"n={n}"]
        for key, val in sorted(diag[n].items()):
            parts.append(f"{key}={val:.6g}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def run_study(config: StudyConfig) -> StudyResult:
    """Execute all levels, compute orders, run diagnostics, write outputs."""
    workers = _worker_count(len(config.levels))
    levels: list[LevelResult] = []
    failed_level = None
    failure_message = ""

    if workers == 1:
        outcomes = []
        for n in config.levels:
            try:
                outcomes.append(solve_level(config, n))
            except SolverError as exc:
                outcomes.append((n, str(exc)))
                break
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(n, pool.submit(solve_level, config, n)) for n in config.levels]
            outcomes = []
            for n, fut in futures:
                try:
                    outcomes.append(fut.result())
                except SolverError as exc:
                    outcomes.append((n, str(exc)))
                    break

    for item in outcomes:
        if isinstance(item, LevelResult):
            levels.append(item)
        else:
            failed_level, failure_message = item
            break

    convergence = None
    if len(levels) >= 2:
        convergence = convergence_orders([lvl.report for lvl in levels])

    diagnostics = _run_diagnostics(config) if failed_level is None else {}
    result = StudyResult(
        config=config,
        levels=levels,
        convergence=convergence,
        diagnostics=diagnostics,
        failed_level=failed_level,
        failure_message=failure_message,
    )

    if config.out is not None:
        base = Path(config.out)
        base.parent.mkdir(parents=True, exist_ok=True)
        if config.output_format in ("csv", "both"):
            result.csv_path = base.with_suffix(".csv")
            result.csv_path.write_text(format_csv(result))
        if config.output_format in ("md", "both"):
            result.md_path = base.with_suffix(".md")
            result.md_path.write_text(format_markdown(result))
        if diagnostics:
            base.with_suffix(".diagnostics.txt").write_text(format_diagnostics(diagnostics))
        if config.dump_mesh:
            for lvl in levels:
                mesh = build_uniform_mesh(config.dim, lvl.n)
                base.with_suffix(f".mesh_n{lvl.n}.txt").write_text(mesh_dump_text(mesh))
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastidg",
        description="Mixed DG elasticity convergence studies on uniform simplicial meshes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    study = sub.add_parser("study", help="run a refinement study and emit tables")
    study.add_argument("--dim", type=int, choices=(2, 3), required=True)
    study.add_argument("--k", type=int, required=True, help="displacement degree (stress uses k+1)")
    study.add_argument("--levels", type=str, required=True,
                       help="comma-separated values of 1/h, strictly increasing")
    study.add_argument("--eta", type=float, default=1.0, help="jump penalty eta_e (default 1)")
    study.add_argument("--solver", choices=("direct", "schur-cg", "minres-mg"),
                       default="direct",
                       help="minres-mg is the memory-lean choice for fine 3D meshes")
    study.add_argument("--format", dest="output_format", choices=("csv", "md", "both"),
                       default="both")
    study.add_argument("--out", type=str, default=None,
                       help="output base path (suffixes .csv/.md are added)")
    study.add_argument("--diagnostics", choices=("none", "infsup", "kell", "lifting", "all"),
                       default="none")
    study.add_argument("--mu", type=float, default=0.5)
    study.add_argument("--lam", type=float, default=1.0)
    study.add_argument("--dump-mesh", action="store_true",
                       help="also write a plain-text mesh listing per level")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = StudyConfig(
            dim=args.dim,
            k=args.k,
            levels=tuple(int(tok) for tok in args.levels.split(",") if tok.strip()),
            eta=args.eta,
            solver=args.solver,
            output_format=args.output_format,
            out=args.out,
            diagnostics=args.diagnostics,
            mu=args.mu,
            lam=args.lam,
            dump_mesh=args.dump_mesh,
        )
    except ValueError as exc:
        print(f"elastidg: invalid configuration: {exc}", file=sys.stderr)
        return 2

    result = run_study(config)
    sys.stdout.write(format_markdown(result))
    if result.diagnostics:
        sys.stdout.write(format_diagnostics(result.diagnostics))
    if not result.ok:
        print(
            f"ELASTIDG-FAIL level={result.failed_level} error={result.failure_message}",
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
