"""Nonlinear parallel-in-time solvers.

Two strategies around the linear multilevel direct solver:

* a global linearization loop (Newton or Picard per a hybrid policy) whose
  update systems are block-bidiagonal and solved exactly by the multilevel
  Schur machinery, and
* a nonlinear-Schur loop at a chosen level k: interface values are the only
  outer unknowns, interior values follow them through nonlinear harmonic
  extensions (independent local solves), and the interface update system is
  the Schur complement of the fine Jacobian at the extended state (implicit
  function theorem), again solved by the direct multilevel method over
  levels k..top.

Local nonlinear solves march element by element (the local systems are lower
block-bidiagonal, so stepwise solving is exact), with per-step Picard/Newton
inner iterations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import NonconvergenceError, SingularStepError, ValidationError
from .integrators import Scheme
from .partition import MultilevelPartition
from .problems import OdeProblem, jacobian_batch, kappa_batch, picard_batch
from .runtime import SolverReport, WorkerPool
from .schur import LevelSystem, cost_model, ml_solve


@dataclass(frozen=True)
class LinearizationPolicy:
    """How nonlinear systems are linearized and when iterations stop.

    ``hybrid`` mode uses Picard's frozen-coefficient operator while the
    residual norm is at or above ``switch_norm`` and Newton below it.
    ``tol_global`` stops outer loops, ``tol_local`` the per-step solves of
    local problems, ``tol_schur`` the nested interface loops of recursive
    extensions (levels >= 1).
    """

    mode: str = "hybrid"  # "newton" | "picard" | "hybrid"
    switch_norm: float = 1e2
    tol_global: float = 1e-8
    tol_local: float = 1e-10
    tol_schur: float = 1e-10
    max_iters: int = 50
    max_inner: int = 50

    def __post_init__(self):
        if self.mode not in ("newton", "picard", "hybrid"):
            raise ValidationError(f"unknown linearization mode {self.mode!r}")
        for label in ("tol_global", "tol_local", "tol_schur"):
            if getattr(self, label) <= 0:
                raise ValidationError(f"{label} must be positive")
        if self.mode == "hybrid" and self.switch_norm <= self.tol_global:
            raise ValidationError("hybrid switch_norm must exceed tol_global")
        if self.max_iters < 1 or self.max_inner < 1:
            raise ValidationError("iteration budgets must be at least 1")

    def pick_mode(self, residual_norm: float) -> str:
        if self.mode == "hybrid":
            return "picard" if residual_norm >= self.switch_norm else "newton"
        return self.mode


def global_residual(
    problem: OdeProblem,
    traj: np.ndarray,
    grid: np.ndarray,
    scheme: Scheme,
):
    """Stacked one-step residuals of a trajectory and their discrete L2 norm.

    Row ``i-1`` (for steps ``i = 1..n``) is
    ``u^i - u^{i-1} + dt_i*(th*kappa(t_i, u^i) + (1-th)*kappa(t_{i-1}, u^{i-1}))``.
    """
    th = scheme.effective_theta()
    kappas = kappa_batch(problem, grid, traj)
    dt = np.diff(grid)[:, None]
    res = traj[1:] - traj[:-1] + dt * (th * kappas[1:] + (1.0 - th) * kappas[:-1])
    return res, float(np.sqrt(np.sum(res * res)))


def _linearization_matrices(problem, ts, us, use_picard):
    if use_picard:
        return picard_batch(problem, ts, us)[0]
    return jacobian_batch(problem, ts, us)


def linearize_global(
    problem: OdeProblem,
    traj: np.ndarray,
    grid: np.ndarray,
    scheme: Scheme,
    use_picard: bool = False,
    residual: np.ndarray | None = None,
) -> LevelSystem:
    """Normalized update system of the global linearization at ``traj``.

    Each block row of the raw linearization is left-multiplied by the inverse
    of its diagonal block, yielding the unit-diagonal bidiagonal form the
    multilevel solver consumes; solving it gives the Newton (or Picard)
    update, with a zero initial-value row since ``traj[0]`` is pinned.
    """
    th = scheme.effective_theta()
    m = problem.m_unk
    if residual is None:
        residual, _ = global_residual(problem, traj, grid, scheme)
    mats = _linearization_matrices(problem, grid, traj, use_picard)
    dt = np.diff(grid)[:, None, None]
    eye = np.eye(m)
    diag = eye + dt * th * mats[1:]
    off = eye - dt * (1.0 - th) * mats[:-1]
    stacked = np.concatenate([off, -residual[:, :, None]], axis=2)
    try:
        solved = np.linalg.solve(diag, stacked)
    except np.linalg.LinAlgError as exc:
        bad = _first_singular(diag)
        raise SingularStepError(
            f"singular linearized step matrix on element {bad + 1} "
            f"({grid[bad]:g}, {grid[bad + 1]:g})", grid[bad], grid[bad + 1]
        ) from exc
    return LevelSystem(level=0, phis=solved[:, :, :m], gs=solved[:, :, m],
                       u_init=np.zeros(m))


def _first_singular(mats: np.ndarray) -> int:
    for i, mat in enumerate(mats):
        if abs(np.linalg.det(mat)) == 0.0 or not np.all(np.isfinite(mat)):
            return i
    return 0


def _implicit_step(problem, t_start, t_end, u_prev, guess, th, policy, tol):
    """Solve one implicit step residual for its unknown endpoint value.

    Returns ``(u, picard_iters, newton_iters)``; raises on budget exhaustion.
    """
    dt = t_end - t_start
    m = problem.m_unk
    eye = np.eye(m)
    tail = dt * (1.0 - th) * np.asarray(problem.kappa(t_start, u_prev), dtype=float) - u_prev
    u = np.array(guess, dtype=float)
    picard = newton = 0
    norm = np.inf
    for it in range(policy.max_inner + 1):
        r = u + tail + dt * th * np.asarray(problem.kappa(t_end, u), dtype=float)
        norm = float(np.linalg.norm(r))
        if norm < tol:
            return u, picard, newton
        if it == policy.max_inner:
            break
        if policy.pick_mode(norm) == "picard":
            mat = problem.picard_matrix(t_end, u)[0] if problem.picard_matrix is not None else None
            if mat is None:
                raise ValidationError(
                    f"problem {problem.name!r} has no Picard splitting; use mode='newton'"
                )
            picard += 1
        else:
            mat = np.asarray(problem.jacobian(t_end, u), dtype=float)
            newton += 1
        u = u + np.linalg.solve(eye + dt * th * mat, -r)
    raise NonconvergenceError(
        f"implicit step ending at t={t_end:g}", policy.max_inner, norm
    )


def sequential_nonlinear_solve(
    problem: OdeProblem,
    grid: np.ndarray,
    scheme: Scheme,
    policy: LinearizationPolicy | None = None,
):
    """Time-marching solve with a Picard/Newton inner loop at every step.

    Per-step solves stop at ``tol_global / sqrt(n)`` so that the returned
    trajectory's stacked global residual norm meets ``tol_global``. Reports
    the average inner iterations per step.
    """
    policy = policy or LinearizationPolicy()
    th = scheme.effective_theta()
    n = len(grid) - 1
    tol_step = policy.tol_global / max(1.0, np.sqrt(n))
    traj = np.empty((n + 1, problem.m_unk))
    traj[0] = problem.u0
    picard = newton = 0
    start = time.perf_counter()
    for i in range(1, n + 1):
        try:
            traj[i], p, nw = _implicit_step(
                problem, grid[i - 1], grid[i], traj[i - 1], traj[i - 1], th, policy, tol_step
            )
        except NonconvergenceError as exc:
            raise NonconvergenceError(
                f"time step {i} (t={grid[i]:g})", exc.iterations, exc.residual_norm
            ) from exc
        picard += p
        newton += nw
    _, norm = global_residual(problem, traj, grid, scheme)
    report = SolverReport(solver="sequential", workers=1)
    report.wall_seconds = time.perf_counter() - start
    report.inner_picard = picard
    report.inner_newton = newton
    report.avg_iterations_per_step = (picard + newton) / n
    report.residual_history = [norm]
    report.outer_iterations = 0
    return traj, report


def _interior_mask(partition: MultilevelPartition, level: int) -> np.ndarray:
    """Boolean mask over residual rows 1..n0 selecting non-interface rows."""
    n0 = partition.counts[0]
    mask = np.ones(n0 + 1, dtype=bool)
    mask[partition.fine_nodes(level)] = False
    return mask[1:]


def _residual_stats(res: np.ndarray, interior_mask: np.ndarray):
    row_norms = np.linalg.norm(res, axis=1)
    interior = row_norms[interior_mask]
    return float(interior.max()) if interior.size else 0.0


def newton_schur_solve(
    problem: OdeProblem,
    partition: MultilevelPartition,
    scheme: Scheme,
    policy: LinearizationPolicy | None = None,
    initial: np.ndarray | None = None,
    workers: int = 1,
):
    """Global linearization loop with an exact multilevel direct solve per update.

    Every update is the exact solution of the linearized system, so iterates
    (hence iteration counts) do not depend on the partition. Returns
    ``(trajectory, report)``.
    """
    policy = policy or LinearizationPolicy()
    scheme.effective_theta()  # validates scheme for nonlinear use
    if partition.n_levels < 2:
        raise ValidationError("newton_schur_solve needs a partition with at least 2 levels")
    grid = partition.grids[0]
    traj = _initial_trajectory(problem, partition, initial)
    interior_mask = _interior_mask(partition, 1)
    report = SolverReport(solver="newton-schur", workers=workers)
    start = time.perf_counter()
    norm = np.inf
    with WorkerPool(workers) as pool:
        for it in range(policy.max_iters + 1):
            res, norm = global_residual(problem, traj, grid, scheme)
            report.residual_history.append(norm)
            report.interior_residual_history.append(_residual_stats(res, interior_mask))
            if norm < policy.tol_global:
                report.converged = True
                break
            if it == policy.max_iters:
                raise NonconvergenceError("global linearization loop",
                                          policy.max_iters, norm)
            mode = policy.pick_mode(norm)
            report.mode_history.append(mode)
            if mode == "picard":
                report.picard_iterations += 1
            else:
                report.newton_iterations += 1
            system = linearize_global(problem, traj, grid, scheme,
                                      use_picard=(mode == "picard"), residual=res)
            traj = traj + ml_solve(system, partition, pool=pool, report=report)
            report.outer_iterations += 1
    report.wall_seconds = time.perf_counter() - start
    report.cost_estimate = cost_model(partition, problem.m_unk)
    return traj, report


def _initial_trajectory(problem, partition, initial):
    n0 = partition.counts[0]
    if initial is None:
        traj = np.tile(problem.u0, (n0 + 1, 1))
    else:
        traj = np.array(initial, dtype=float)
        if traj.shape != (n0 + 1, problem.m_unk):
            raise ValidationError(f"initial guess must have shape ({n0 + 1}, {problem.m_unk})")
        traj[0] = problem.u0
    return traj


# Nonlinear harmonic extension -------------------------------------------------


@dataclass
class ExtensionResult:
    """Extended values over an element's fine window plus inner-loop counts.

    ``values`` covers the fine nodes from the element's left interface
    (inclusive, pinned to the inflow) up to its right interface (exclusive).
    """

    values: np.ndarray
    picard: int
    newton: int


def nonlinear_harmonic_extension(
    problem: OdeProblem,
    partition: MultilevelPartition,
    level: int,
    index: int,
    inflow: np.ndarray,
    warm: np.ndarray,
    scheme: Scheme,
    policy: LinearizationPolicy,
) -> ExtensionResult:
    """Extend one interface value into element ``index`` of level ``level + 1``.

    ``level == 0`` marches the local nonlinear problem over the element's
    fine steps from the inflow (per-step solves to ``tol_local``). Higher
    levels run a nested interface loop: extend recursively into every child
    element, assemble the child-chain update system, and sweep it, until the
    window's own interface residual drops below ``tol_schur``. ``warm`` holds
    fine values over the element's window as initial guesses.
    """
    th = scheme.effective_theta()
    bounds = partition.subdomain_bounds(level)
    a, b = int(bounds[index]), int(bounds[index + 1])
    fine = partition.fine_nodes(level)
    f_lo, f_hi = int(fine[a]), int(fine[b])
    grid0 = partition.grids[0]
    m = problem.m_unk
    if warm.shape != (f_hi - f_lo, m):
        raise ValidationError("warm start does not match the element's fine window")

    if level == 0:
        values = np.empty((f_hi - f_lo, m))
        values[0] = inflow
        picard = newton = 0
        for node in range(f_lo + 1, f_hi):
            loc = node - f_lo
            try:
                values[loc], p, nw = _implicit_step(
                    problem, grid0[node - 1], grid0[node], values[loc - 1],
                    warm[loc], th, policy, policy.tol_local,
                )
            except NonconvergenceError as exc:
                raise NonconvergenceError(
                    f"nonlinear extension (level 0, element {index}, t={grid0[node]:g})",
                    exc.iterations, exc.residual_norm,
                ) from exc
            picard += p
            newton += nw
        return ExtensionResult(values, picard, newton)

    fine_lvl = partition.fine_nodes(level)
    loc = fine_lvl - f_lo  # window-local offsets of level-`level` nodes
    wvals = np.array(warm, dtype=float)
    wvals[0] = inflow
    picard = newton = 0
    norm = np.inf
    for it in range(policy.max_inner + 1):
        for e in range(a, b):
            child = nonlinear_harmonic_extension(
                problem, partition, level - 1, e, wvals[loc[e]],
                wvals[loc[e]:loc[e + 1]], scheme, policy,
            )
            wvals[loc[e]:loc[e + 1]] = child.values
            picard += child.picard
            newton += child.newton
        if b - a == 1:
            return ExtensionResult(wvals, picard, newton)
        rows = np.empty((b - a - 1, m))
        for p in range(a + 1, b):
            node = fine_lvl[p]
            rows[p - a - 1] = _step_residual(
                problem, grid0[node - 1], grid0[node],
                wvals[loc[p] - 1], wvals[loc[p]], th,
            )
        norm = float(np.sqrt(np.sum(rows * rows)))
        if norm < policy.tol_schur:
            return ExtensionResult(wvals, picard, newton)
        if it == policy.max_inner:
            break
        use_picard = policy.pick_mode(norm) == "picard"
        if use_picard:
            picard += 1
        else:
            newton += 1
        # Linearize every block row at the frozen extended state, then sweep.
        blocks = [
            _schur_rows(
                problem, grid0[fine_lvl[p - 1]:fine_lvl[p] + 1],
                wvals[loc[p - 1]:loc[p]], wvals[loc[p]], th, use_picard,
            )
            for p in range(a + 1, b)
        ]
        delta = np.zeros(m)
        for p, (block, rhs) in zip(range(a + 1, b), blocks):
            delta = block @ delta + rhs
            wvals[loc[p]] = wvals[loc[p]] + delta
    raise NonconvergenceError(
        f"nonlinear extension (level {level}, element {index})", policy.max_inner, norm
    )


def _step_residual(problem, t_start, t_end, u_in, u_out, th):
    dt = t_end - t_start
    return u_out - u_in + dt * (
        th * np.asarray(problem.kappa(t_end, u_out), dtype=float)
        + (1.0 - th) * np.asarray(problem.kappa(t_start, u_in), dtype=float)
    )


def _schur_rows(problem, ts, us, u_end, th, use_picard):
    """One subdomain's interface block row of the level-up Schur system.

    ``ts`` holds the subdomain's fine node times (both interfaces included),
    ``us`` the extended values up to but excluding the right interface, and
    ``u_end`` the right-interface value. Returns the normalized coarse
    propagator (closing step chained through the interior linearization) and
    the normalized negative interface residual.
    """
    m = problem.m_unk
    size = len(us)
    us_full = np.vstack([us, u_end[None, :]])
    mats = _linearization_matrices(problem, ts, us_full, use_picard)
    dt = np.diff(ts)[:, None, None]
    eye = np.eye(m)
    diag = eye + dt * th * mats[1:]
    off = eye - dt * (1.0 - th) * mats[:-1]
    try:
        phis = np.linalg.solve(diag, off)
    except np.linalg.LinAlgError as exc:
        raise SingularStepError("singular linearized step inside a subdomain") from exc
    chain = eye
    for j in range(size - 1):
        chain = phis[j] @ chain
    r_close = _step_residual(problem, ts[-2], ts[-1], us_full[-2], us_full[-1], th)
    rhs = np.linalg.solve(diag[-1], -r_close)
    return phis[-1] @ chain, rhs


def _extension_task(problem, partition, level, index, inflow, warm, scheme, policy):
    res = nonlinear_harmonic_extension(
        problem, partition, level, index, inflow, warm, scheme, policy
    )
    return res.values, res.picard, res.newton


def _schur_row_task(problem, ts, us, u_end, th, use_picard):
    return _schur_rows(problem, ts, us, u_end, th, use_picard)


def nonlinear_schur_newton_solve(
    problem: OdeProblem,
    partition: MultilevelPartition,
    k: int,
    scheme: Scheme,
    policy: LinearizationPolicy | None = None,
    initial: np.ndarray | None = None,
    workers: int = 1,
):
    """Outer loop on level-k interface values with nonlinear harmonic extensions.

    Per outer iteration: extend every level-k element in parallel, test the
    global fine residual, assemble the level-k Schur system of the fine
    linearization at the extended state, solve the interface update with the
    direct multilevel method over levels k..top, and update. The final
    trajectory is the extensions plus the interface values.
    """
    policy = policy or LinearizationPolicy()
    th = scheme.effective_theta()
    if not 1 <= k <= partition.top_level:
        raise ValidationError(f"level k={k} outside 1..{partition.top_level}")
    grid = partition.grids[0]
    n_k = partition.counts[k]
    fine_k = partition.fine_nodes(k)
    traj = _initial_trajectory(problem, partition, initial)
    z = traj[fine_k].copy()
    interior_mask = _interior_mask(partition, k)
    report = SolverReport(solver=f"nlschur:{k}", workers=workers)
    start = time.perf_counter()
    norm = np.inf
    with WorkerPool(workers) as pool:
        w = _extend_all(problem, partition, k, z, traj, scheme, policy, pool, report)
        for it in range(policy.max_iters + 1):
            res, norm = global_residual(problem, w, grid, scheme)
            report.residual_history.append(norm)
            report.interior_residual_history.append(_residual_stats(res, interior_mask))
            if norm < policy.tol_global:
                report.converged = True
                break
            if it == policy.max_iters:
                raise NonconvergenceError(
                    f"nonlinear Schur loop at level {k}", policy.max_iters, norm
                )
            mode = policy.pick_mode(norm)
            report.mode_history.append(mode)
            if mode == "picard":
                report.picard_iterations += 1
            else:
                report.newton_iterations += 1
            args = [
                (problem, grid[fine_k[i]:fine_k[i + 1] + 1],
                 w[fine_k[i]:fine_k[i + 1]], z[i + 1], th, mode == "picard")
                for i in range(n_k)
            ]
            rows, seconds, _ = pool.map(_schur_row_task, args)
            report.add_level_tasks(0, seconds)
            system = LevelSystem(
                level=k,
                phis=np.stack([r[0] for r in rows]),
                gs=np.stack([r[1] for r in rows]),
                u_init=np.zeros(problem.m_unk),
            )
            z = z + ml_solve(system, partition, pool=pool, report=report)
            report.outer_iterations += 1
            w = _extend_all(problem, partition, k, z, w, scheme, policy, pool, report)
    report.wall_seconds = time.perf_counter() - start
    report.cost_estimate = cost_model(partition, problem.m_unk)
    return w, report


def _extend_all(problem, partition, k, z, warm_traj, scheme, policy, pool, report):
    fine_k = partition.fine_nodes(k)
    n_k = partition.counts[k]
    args = [
        (problem, partition, k - 1, i, z[i],
         warm_traj[fine_k[i]:fine_k[i + 1]].copy(), scheme, policy)
        for i in range(n_k)
    ]
    results, seconds, _ = pool.map(_extension_task, args)
    report.add_level_tasks(0, seconds)
    w = np.empty_like(warm_traj)
    for i, (values, picard, newton) in enumerate(results):
        w[fine_k[i]:fine_k[i + 1]] = values
        report.inner_picard += picard
        report.inner_newton += newton
    w[-1] = z[-1]
    return w
