"""Benchmark harness: desk-scale weak-scaling runs, figure data, verification.

Every run emits tidy CSV rows (one per run and level) carrying the full
experiment fingerprint, so identical specs reproduce identical non-timing
columns byte for byte. Figures are emitted as data plus a matplotlib script,
never as rendered images.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import TimeSchurError, ValidationError
from .integrators import Scheme, parse_scheme
from .nonlinear import (
    LinearizationPolicy,
    newton_schur_solve,
    nonlinear_schur_newton_solve,
    sequential_nonlinear_solve,
)
from .partition import MultilevelPartition, build_adaptive_top, build_explicit, build_uniform
from .problems import (
    OdeProblem,
    by_name,
    cosine_drive,
    default_t_end,
    forced_riccati,
    linear_decay,
    lotka_volterra,
    random_stable_linear,
    zero_operator,
)
from .runtime import SolverReport, available_workers
from .schur import (
    LevelSystem,
    assemble_schur,
    build_linear_system,
    extension_operator,
    interior_correction,
    ml_solve,
    petrov_galerkin_assemble,
    restriction_operator,
    sequential_solve,
)

CSV_COLUMNS = [
    "spec_hash", "command", "variant", "problem", "solver", "scheme",
    "n0", "n1", "n2", "level", "workers", "oversubscribed", "reps",
    "outer_iters", "picard_iters", "newton_iters", "avg_step_iters",
    "residual_final", "wall_s_max", "wall_s_sum", "status", "message",
]


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one benchmark run."""

    problem: str = "lotka-volterra"
    problem_params: dict = field(default_factory=dict)
    scheme: str = "be"
    solver: str = "newton-schur"
    t_end: float | None = None
    n0: int = 1000
    n1: int | None = 10
    n2: int | None = None
    ratio: int | None = None
    levels: int | None = None
    adaptive: bool = False
    mode: str = "hybrid"
    switch_norm: float = 1e2
    tol_global: float = 1e-8
    tol_local: float = 1e-10
    max_iters: int = 50
    workers: int | None = None
    reps: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ValidationError("repetitions must be >= 1")

    def fingerprint(self) -> str:
        payload = asdict(self)
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def resolved_t_end(self) -> float:
        return self.t_end if self.t_end is not None else default_t_end(self.problem)

    def build_problem(self) -> OdeProblem:
        return by_name(self.problem, **self.problem_params)

    def scheme_obj(self) -> Scheme:
        return parse_scheme(self.scheme)

    def policy(self) -> LinearizationPolicy:
        return LinearizationPolicy(
            mode=self.mode,
            switch_norm=self.switch_norm,
            tol_global=self.tol_global,
            tol_local=self.tol_local,
            tol_schur=self.tol_local,
            max_iters=self.max_iters,
        )

    def build_partition(self) -> MultilevelPartition:
        t_end = self.resolved_t_end()
        if self.ratio is not None:
            part = build_uniform(t_end, self.n0, self.ratio, max_levels=self.levels)
        else:
            counts = [self.n0]
            if self.n1 is not None:
                counts.append(self.n1)
            if self.n2 is not None:
                counts.append(self.n2)
            part = build_explicit(counts, t_end=t_end)
        if self.adaptive:
            part = build_adaptive_top(part)
        return part

    def run_workers(self) -> int:
        return self.workers if self.workers is not None else available_workers()


def parse_solver(text: str):
    """``sequential``, ``newton-schur`` or ``nlschur:<k>`` -> (kind, level)."""
    text = text.strip().lower()
    if text == "sequential":
        return "sequential", None
    if text == "newton-schur":
        return "newton-schur", None
    if text.startswith("nlschur:"):
        try:
            k = int(text.split(":", 1)[1])
        except ValueError as exc:
            raise ValidationError(f"bad nonlinear Schur level in {text!r}") from exc
        if k < 1:
            raise ValidationError("nonlinear Schur level must be >= 1")
        return "nlschur", k
    raise ValidationError(
        f"unknown solver {text!r} (expected sequential, newton-schur, nlschur:<k>)"
    )


def run_solver(spec: ExperimentSpec, partition: MultilevelPartition | None = None,
               workers: int | None = None):
    """Dispatch one solve; returns ``(trajectory, report)``."""
    problem = spec.build_problem()
    scheme = spec.scheme_obj()
    policy = spec.policy()
    partition = partition if partition is not None else spec.build_partition()
    workers = workers if workers is not None else spec.run_workers()
    kind, level = parse_solver(spec.solver)
    if kind == "sequential":
        return sequential_nonlinear_solve(problem, partition.grids[0], scheme, policy)
    if kind == "newton-schur":
        return newton_schur_solve(problem, partition, scheme, policy, workers=workers)
    return nonlinear_schur_newton_solve(problem, partition, level, scheme, policy,
                                        workers=workers)


def _base_row(spec: ExperimentSpec, command: str, variant: str,
              partition: MultilevelPartition | None, workers: int) -> dict:
    counts = partition.counts if partition is not None else (spec.n0,)
    return {
        "spec_hash": spec.fingerprint(),
        "command": command,
        "variant": variant,
        "problem": spec.problem,
        "solver": spec.solver,
        "scheme": spec.scheme,
        "n0": counts[0],
        "n1": counts[1] if len(counts) > 1 else "",
        "n2": counts[2] if len(counts) > 2 else "",
        "level": "",
        "workers": workers,
        "oversubscribed": workers > available_workers(),
        "reps": spec.reps,
        "outer_iters": "",
        "picard_iters": "",
        "newton_iters": "",
        "avg_step_iters": "",
        "residual_final": "",
        "wall_s_max": "",
        "wall_s_sum": "",
        "status": "ok",
        "message": "",
    }


def _report_rows(base: dict, report: SolverReport,
                 timing_max: dict, timing_sum: dict) -> list[dict]:
    rows = []
    levels = sorted(timing_max) if timing_max else [0]
    for level in levels:
        row = dict(base)
        row["level"] = level
        row["outer_iters"] = report.outer_iterations
        row["picard_iters"] = report.picard_iterations
        row["newton_iters"] = report.newton_iterations
        if report.avg_iterations_per_step is not None:
            row["avg_step_iters"] = f"{report.avg_iterations_per_step:.6g}"
        if report.residual_final is not None:
            row["residual_final"] = f"{report.residual_final:.17g}"
        row["wall_s_max"] = f"{timing_max.get(level, 0.0):.9f}"
        row["wall_s_sum"] = f"{timing_sum.get(level, 0.0):.9f}"
        rows.append(row)
    return rows


def _run_with_reps(spec: ExperimentSpec, partition: MultilevelPartition, workers: int):
    """Repeat one solve, keeping the first report and min-over-reps timings."""
    report = None
    timing_max: dict = {}
    timing_sum: dict = {}
    traj = None
    for rep in range(spec.reps):
        traj, rep_report = run_solver(spec, partition, workers)
        if report is None:
            report = rep_report
        per_max = rep_report.per_level_max or {0: rep_report.wall_seconds}
        per_sum = rep_report.per_level_sum or {0: rep_report.wall_seconds}
        for level, secs in per_max.items():
            timing_max[level] = min(timing_max.get(level, math.inf), secs)
        for level, secs in per_sum.items():
            timing_sum[level] = min(timing_sum.get(level, math.inf), secs)
    return traj, report, timing_max, timing_sum


def _sequential_baseline(spec: ExperimentSpec, partition: MultilevelPartition) -> dict:
    seq_spec = ExperimentSpec(**{**asdict(spec), "solver": "sequential"})
    base = _base_row(seq_spec, "weak-scaling", "seq", partition, 1)
    best = math.inf
    report = None
    for _ in range(spec.reps):
        _, report = run_solver(seq_spec, partition, workers=1)
        best = min(best, report.wall_seconds)
    base["level"] = "seq"
    base["outer_iters"] = report.outer_iterations
    base["picard_iters"] = report.inner_picard
    base["newton_iters"] = report.inner_newton
    base["avg_step_iters"] = f"{report.avg_iterations_per_step:.6g}"
    base["residual_final"] = f"{report.residual_final:.17g}"
    base["wall_s_max"] = f"{best:.9f}"
    base["wall_s_sum"] = f"{best:.9f}"
    return base


def run_weak_scaling(spec: ExperimentSpec, n1_list: list[int],
                     local_size: int) -> list[dict]:
    """Fixed local problem size, growing subdomain count; one row per (n1, level).

    Each sweep point solves ``n0 = local_size * n1`` fine steps on a two-level
    partition with ``min(n1, spec workers)`` workers, plus a sequential
    baseline row. Solver failures become ``status=failed`` rows; the sweep
    continues.
    """
    if any(b <= a for a, b in zip(n1_list, n1_list[1:])):
        raise ValidationError("n1 list must be strictly ascending")
    if local_size < 1:
        raise ValidationError("local size must be >= 1")
    rows = []
    for n1 in n1_list:
        point = ExperimentSpec(**{**asdict(spec), "n0": local_size * n1, "n1": n1,
                                  "n2": None, "ratio": None, "adaptive": False})
        partition = point.build_partition()
        # One modeled worker per subdomain (actual processes cap at the cores).
        workers = n1 if spec.workers is None else min(n1, spec.workers)
        base = _base_row(point, "weak-scaling", "parallel", partition, workers)
        try:
            _, report, tmax, tsum = _run_with_reps(point, partition, workers)
            rows.extend(_report_rows(base, report, tmax, tsum))
        except TimeSchurError as exc:
            failed = dict(base)
            failed["status"] = "failed"
            failed["message"] = str(exc)
            rows.append(failed)
        rows.append(_sequential_baseline(point, partition))
    return rows


def run_three_level(spec: ExperimentSpec, compare_two_level: bool = False) -> list[dict]:
    """One three-level run (counts n0 > n1 > n2), optionally paired with two-level.

    The adaptive flag rebalances the top coarsening to ``round(sqrt(n1))``.
    """
    if spec.n1 is None:
        raise ValidationError("three-level runs need n1")
    t_end = spec.resolved_t_end()
    if spec.adaptive:
        partition = build_adaptive_top(build_explicit([spec.n0, spec.n1, 1], t_end=t_end))
    else:
        if spec.n2 is None:
            raise ValidationError("three-level runs need n2 (or the adaptive flag)")
        if not spec.n2 < spec.n1 < spec.n0:
            raise ValidationError("three-level runs require n2 < n1 < n0")
        partition = build_explicit([spec.n0, spec.n1, spec.n2], t_end=t_end)
    workers = spec.n1 if spec.workers is None else min(spec.n1, spec.workers)
    rows = []
    base = _base_row(spec, "three-level", "three-level", partition, workers)
    try:
        _, report, tmax, tsum = _run_with_reps(spec, partition, workers)
        rows.extend(_report_rows(base, report, tmax, tsum))
    except TimeSchurError as exc:
        failed = dict(base)
        failed["status"] = "failed"
        failed["message"] = str(exc)
        rows.append(failed)
    if compare_two_level:
        two = build_explicit([spec.n0, spec.n1], t_end=t_end)
        base2 = _base_row(spec, "three-level", "two-level", two, workers)
        try:
            _, report2, tmax2, tsum2 = _run_with_reps(spec, two, workers)
            rows.extend(_report_rows(base2, report2, tmax2, tsum2))
        except TimeSchurError as exc:
            failed = dict(base2)
            failed["status"] = "failed"
            failed["message"] = str(exc)
            rows.append(failed)
    return rows


def write_rows(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def write_trajectory(traj: np.ndarray, grid: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = traj.shape[1]
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t"] + [f"u{i}" for i in range(m)])
        for t, row in zip(grid, traj):
            writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
    return path


# Figure data ------------------------------------------------------------------

FIGURE_KINDS = ("coarse_shapes", "decomposition", "lv_phase", "convergence")

_PLOT_TEMPLATES = {
    "coarse_shapes": """\
import csv
import matplotlib.pyplot as plt

series = {}
with open("__CSV__") as handle:
    for row in csv.DictReader(handle):
        series.setdefault(row["series"], []).append((float(row["t"]), float(row["value"])))
fig, axes = plt.subplots(1, 2, figsize=(9, 3.2), sharey=True)
for ax, name in zip(axes, ["extension", "restriction"]):
    pts = sorted(series[name])
    ax.step([p[0] for p in pts], [p[1] for p in pts], where="post", marker=".")
    ax.set_title(name)
    ax.set_xlabel("t")
fig.tight_layout()
fig.savefig("__PNG__", dpi=150)
""",
    "decomposition": """\
import csv
import matplotlib.pyplot as plt

series = {}
with open("__CSV__") as handle:
    for row in csv.DictReader(handle):
        series.setdefault(row["series"], []).append((float(row["t"]), float(row["value"])))
fig, ax = plt.subplots(figsize=(6, 3.6))
for name, style in [("full", "-"), ("coarse", "--"), ("fine", ":")]:
    pts = sorted(series[name])
    ax.plot([p[0] for p in pts], [p[1] for p in pts], style, label=name)
ax.set_xlabel("t")
ax.legend()
fig.tight_layout()
fig.savefig("__PNG__", dpi=150)
""",
    "lv_phase": """\
import csv
import matplotlib.pyplot as plt

series = {}
with open("__CSV__") as handle:
    for row in csv.DictReader(handle):
        series.setdefault(row["series"], []).append((float(row["t"]), float(row["value"])))
prey = [p[1] for p in sorted(series["prey"])]
pred = [p[1] for p in sorted(series["predator"])]
ts = [p[0] for p in sorted(series["prey"])]
fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
axes[0].plot(ts, prey, label="prey")
axes[0].plot(ts, pred, label="predator")
axes[0].set_xlabel("t")
axes[0].legend()
axes[1].plot(prey, pred)
axes[1].set_xlabel("prey")
axes[1].set_ylabel("predator")
fig.tight_layout()
fig.savefig("__PNG__", dpi=150)
""",
    "convergence": """\
import csv
import matplotlib.pyplot as plt

pts = []
with open("__CSV__") as handle:
    for row in csv.DictReader(handle):
        pts.append((float(row["t"]), float(row["value"])))
pts.sort()
fig, ax = plt.subplots(figsize=(5, 3.6))
ax.semilogy([p[0] for p in pts], [p[1] for p in pts], marker="o")
ax.set_xlabel("iteration")
ax.set_ylabel("residual norm")
fig.tight_layout()
fig.savefig("__PNG__", dpi=150)
""",
}


def emit_figure_data(kind: str, spec: ExperimentSpec, out: str | Path):
    """Write a tidy ``(t, series, value)`` CSV plus a matplotlib script for ``kind``.

    Returns ``(rows, csv_path, script_path)``.
    """
    if kind not in FIGURE_KINDS:
        raise ValidationError(f"unknown figure kind {kind!r} (expected {FIGURE_KINDS})")
    rows = _figure_rows(kind, spec)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "series", "value"])
        for t, series, value in rows:
            writer.writerow([f"{t:.17g}", series, f"{value:.17g}"])
    script_path = out.with_name(out.stem + "_plot.py")
    script = _PLOT_TEMPLATES[kind].replace("__CSV__", out.name)
    script = script.replace("__PNG__", out.stem + ".png")
    script_path.write_text(script, encoding="utf-8")
    return rows, out, script_path


def _figure_rows(kind: str, spec: ExperimentSpec):
    if kind == "coarse_shapes":
        return _coarse_shape_rows(spec.scheme_obj())
    if kind == "decomposition":
        return _decomposition_rows(spec.scheme_obj())
    if kind == "lv_phase":
        return _lv_phase_rows(spec)
    return _convergence_rows(spec)


def _coarse_shape_rows(scheme: Scheme):
    # Three subdomains of five elements each on [0, pi], kappa = 0: the
    # extension of the middle coarse node is 1 on its subdomain, the matching
    # restriction is 1 left of it.
    partition = build_explicit([15, 3], t_end=math.pi)
    problem = zero_operator(1)
    sys0 = build_linear_system(problem, partition.grids[0], scheme)
    bounds = partition.subdomain_bounds(0)
    ext = extension_operator(sys0, bounds)
    restr = restriction_operator(sys0, bounds)
    grid = partition.grids[0]
    n0 = partition.counts[0]
    e_vals = np.zeros(n0 + 1)
    a, b = bounds[1], bounds[2]
    e_vals[a:b] = ext[1][:, 0, 0]
    f_vals = np.zeros(n0 + 1)
    a0, b0 = bounds[0], bounds[1]
    f_vals[a0 + 1:b0 + 1] = restr[0][:, 0, 0]
    rows = []
    for j in range(n0 + 1):
        rows.append((grid[j], "extension", e_vals[j]))
        rows.append((grid[j], "restriction", f_vals[j]))
    return rows


def _decomposition_rows(scheme: Scheme):
    # 10 subdomains of 50 elements each on [0, pi]; du/dt = cos(t) from 0.
    partition = build_explicit([500, 10], t_end=math.pi)
    problem = cosine_drive()
    sys0 = build_linear_system(problem, partition.grids[0], scheme)
    bounds = partition.subdomain_bounds(0)
    v = interior_correction(sys0, bounds)
    ext = extension_operator(sys0, bounds)
    coarse = assemble_schur(sys0, v, ext, bounds)
    u1 = sequential_solve(coarse)
    n0 = partition.counts[0]
    coarse_part = np.empty((n0 + 1, 1))
    for i, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        coarse_part[a:b] = ext[i] @ u1[i]
    coarse_part[-1] = u1[-1]
    full = v + coarse_part
    grid = partition.grids[0]
    rows = []
    for j in range(n0 + 1):
        rows.append((grid[j], "full", full[j, 0]))
        rows.append((grid[j], "coarse", coarse_part[j, 0]))
        rows.append((grid[j], "fine", v[j, 0]))
    return rows


def _lv_phase_rows(spec: ExperimentSpec):
    params = dict(alpha=3.0, beta=0.2, gamma=2.0, delta=0.1, u0=10.0, v0=40.0)
    params.update({k: v for k, v in spec.problem_params.items() if k in params})
    problem = lotka_volterra(**params)
    t_end = spec.t_end if spec.t_end is not None else 3.0
    n0 = spec.n0
    grid = np.linspace(0.0, t_end, n0 + 1)
    traj, _ = sequential_nonlinear_solve(problem, grid, spec.scheme_obj(), spec.policy())
    rows = []
    for t, (u, v) in zip(grid, traj):
        rows.append((t, "prey", u))
        rows.append((t, "predator", v))
    return rows


def _convergence_rows(spec: ExperimentSpec):
    # Global linearization history of the sin-solution benchmark: 500 steps on
    # (0, 2*pi], 15 subdomains, one-point DG.
    partition = build_explicit([500, 15], t_end=2.0 * math.pi)
    problem = forced_riccati()
    _, report = newton_schur_solve(problem, partition, Scheme.dg(0), spec.policy())
    return [(float(i), "residual", r) for i, r in enumerate(report.residual_history)]


# Verification suite -----------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    error: float
    threshold: float
    detail: str = ""


def _random_system(n: int, m: int, rng: np.random.Generator) -> LevelSystem:
    phis = rng.normal(size=(n, m, m)) * (0.9 / math.sqrt(m))
    gs = rng.normal(size=(n, m))
    return LevelSystem(level=0, phis=phis, gs=gs, u_init=rng.normal(size=m))


def verify(workers: int = 1) -> list[CheckResult]:
    """Run the built-in oracle suite; failures are entries, never exceptions."""
    checks = []

    # Direct-method exactness against plain forward substitution.
    worst = 0.0
    for problem in (linear_decay(1.0), random_stable_linear(2, seed=3)):
        partition = build_uniform(1.0, 2000, 50)
        sys0 = build_linear_system(problem, partition.grids[0], Scheme.backward_euler())
        exact = sequential_solve(sys0)
        ml = ml_solve(sys0, partition)
        worst = max(worst, float(np.max(np.abs(ml - exact) / (np.abs(exact) + 1e-30))))
    checks.append(CheckResult("linear_exactness", worst <= 1e-10, worst, 1e-10))

    # Petrov-Galerkin equivalence of the two coarse assemblies.
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(5):
        sys0 = _random_system(20, 2, rng)
        partition = build_explicit([20, 4], t_end=1.0)
        bounds = partition.subdomain_bounds(0)
        v = interior_correction(sys0, bounds)
        ext = extension_operator(sys0, bounds)
        restr = restriction_operator(sys0, bounds)
        direct = assemble_schur(sys0, v, ext, bounds)
        pg = petrov_galerkin_assemble(sys0, ext, restr, bounds)
        scale = float(np.max(np.abs(direct.phis))) + 1e-30
        worst = max(worst, float(np.max(np.abs(direct.phis - pg.phis))) / scale)
        worst = max(worst, float(np.max(np.abs(direct.gs - pg.gs)))
                    / (float(np.max(np.abs(direct.gs))) + 1e-30))
    checks.append(CheckResult("petrov_galerkin", worst <= 1e-12, worst, 1e-12))

    # Outer iteration counts must not depend on the partition.
    problem = forced_riccati()
    counts = []
    for n1 in (2, 5, 10):
        partition = build_explicit([200, n1], t_end=2.0 * math.pi)
        _, report = newton_schur_solve(problem, partition, Scheme.backward_euler(),
                                       LinearizationPolicy(), workers=workers)
        counts.append(report.outer_iterations)
    spread = float(max(counts) - min(counts))
    checks.append(CheckResult("newton_partition_independence", spread == 0.0,
                              spread, 0.0, detail=f"counts={counts}"))

    # All three nonlinear strategies solve the same discrete system.
    partition = build_explicit([300, 10], t_end=2.0 * math.pi)
    policy = LinearizationPolicy()
    grid = partition.grids[0]
    seq, _ = sequential_nonlinear_solve(problem, grid, Scheme.backward_euler(), policy)
    gns, _ = newton_schur_solve(problem, partition, Scheme.backward_euler(), policy,
                                workers=workers)
    nls, _ = nonlinear_schur_newton_solve(problem, partition, 1, Scheme.backward_euler(),
                                          policy, workers=workers)
    worst = max(
        float(np.max(np.abs(seq - gns))),
        float(np.max(np.abs(seq - nls))),
        float(np.max(np.abs(gns - nls))),
    )
    checks.append(CheckResult("nonlinear_agreement", worst <= 1e-6, worst, 1e-6))
    return checks
