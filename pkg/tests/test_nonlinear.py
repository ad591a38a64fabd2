import numpy as np
import pytest

from timeschur import (
    LinearizationPolicy,
    NonconvergenceError,
    Scheme,
    ValidationError,
    build_explicit,
    build_linear_system,
    forced_riccati,
    global_residual,
    linear_decay,
    linearize_global,
    lotka_volterra,
    ml_solve,
    newton_schur_solve,
    nonlinear_harmonic_extension,
    nonlinear_schur_newton_solve,
    random_stable_linear,
    sequential_nonlinear_solve,
    sequential_solve,
)
from timeschur.nonlinear import _schur_rows

LV_BENCH = dict(alpha=3.0, beta=0.2, gamma=2.0, delta=0.1, u0=10.0, v0=40.0)
BE = Scheme.backward_euler()


def benchmark_lv():
    return lotka_volterra(**LV_BENCH)


class TestPolicy:
    def test_default_tolerances(self):
        policy = LinearizationPolicy()
        assert policy.mode == "hybrid"
        assert policy.switch_norm == 1e2
        assert policy.tol_global == 1e-8
        assert policy.tol_local == 1e-10

    @pytest.mark.parametrize("kwargs", [
        dict(mode="bogus"),
        dict(tol_global=0.0),
        dict(tol_local=-1e-9),
        dict(mode="hybrid", switch_norm=1e-9),
        dict(max_iters=0),
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValidationError):
            LinearizationPolicy(**kwargs)

    def test_hybrid_pick(self):
        policy = LinearizationPolicy(switch_norm=10.0)
        assert policy.pick_mode(10.0) == "picard"
        assert policy.pick_mode(9.999) == "newton"


class TestSequentialSolve:
    def test_linear_problem_needs_one_newton_per_step(self):
        prob = random_stable_linear(2, seed=1)
        grid = np.linspace(0.0, 1.0, 101)
        _, report = sequential_nonlinear_solve(prob, grid, BE,
                                               LinearizationPolicy(mode="newton"))
        assert report.avg_iterations_per_step == pytest.approx(1.0)
        assert report.inner_newton == 100

    def test_riccati_matches_analytic_solution(self):
        prob = forced_riccati()
        grid = np.linspace(0.0, 2 * np.pi, 501)
        traj, report = sequential_nonlinear_solve(prob, grid, BE, LinearizationPolicy())
        err = np.max(np.abs(traj[:, 0] - np.sin(grid)))
        assert err < 0.2  # first order at dt ~ 0.0126
        assert report.residual_final <= 1e-8

    def test_lotka_volterra_stays_positive_and_matches_fine_reference(self):
        prob = benchmark_lv()
        coarse_grid = np.linspace(0.0, 3.0, 5001)
        fine_grid = np.linspace(0.0, 3.0, 50001)
        coarse, _ = sequential_nonlinear_solve(prob, coarse_grid, BE, LinearizationPolicy())
        fine, _ = sequential_nonlinear_solve(prob, fine_grid, BE, LinearizationPolicy())
        assert np.all(coarse > 0.0)
        assert np.max(coarse) < 100.0
        rel = np.linalg.norm(coarse - fine[::10]) / np.linalg.norm(fine[::10])
        assert rel < 0.02

    def test_nonconvergence_names_the_step(self):
        prob = benchmark_lv()
        grid = np.linspace(0.0, 3.0, 11)
        policy = LinearizationPolicy(mode="newton", max_inner=1)
        with pytest.raises(NonconvergenceError) as err:
            sequential_nonlinear_solve(prob, grid, BE, policy)
        assert "time step" in str(err.value)


class TestGlobalResidual:
    def test_exact_linear_trajectory_has_tiny_residual(self):
        prob = random_stable_linear(2, seed=2)
        part = build_explicit([50, 5], t_end=1.0)
        sys0 = build_linear_system(prob, part.grids[0], BE)
        traj = sequential_solve(sys0)
        _, norm = global_residual(prob, traj, part.grids[0], BE)
        assert norm <= 1e-12

    def test_sequential_output_meets_global_tolerance(self):
        prob = benchmark_lv()
        grid = np.linspace(0.0, 3.0, 2001)
        traj, _ = sequential_nonlinear_solve(prob, grid, BE, LinearizationPolicy())
        _, norm = global_residual(prob, traj, grid, BE)
        assert norm <= 1e-8

    def test_perturbation_is_local_to_two_rows(self):
        prob = benchmark_lv()
        grid = np.linspace(0.0, 3.0, 101)
        traj, _ = sequential_nonlinear_solve(prob, grid, BE, LinearizationPolicy())
        bumped = traj.copy()
        bumped[40, 0] += 1.0
        res, _ = global_residual(prob, bumped, grid, BE)
        row_norms = np.linalg.norm(res, axis=1)
        touched = np.nonzero(row_norms > 1e-9)[0]
        assert set(touched) == {39, 40}  # rows of steps 40 and 41


class TestNewtonSchur:
    def test_linear_problem_converges_in_one_iteration(self):
        prob = random_stable_linear(3, seed=3)
        part = build_explicit([64, 8], t_end=1.0)
        policy = LinearizationPolicy(mode="newton")
        traj, report = newton_schur_solve(prob, part, BE, policy)
        assert report.outer_iterations == 1
        sys0 = build_linear_system(prob, part.grids[0], BE)
        direct = ml_solve(sys0, part)
        assert np.max(np.abs(traj - direct)) <= 1e-12

    def test_riccati_fifteen_subdomains_matches_sequential(self):
        prob = forced_riccati()
        part = build_explicit([500, 15], t_end=2 * np.pi)
        policy = LinearizationPolicy()
        traj, report = newton_schur_solve(prob, part, Scheme.dg(0), policy)
        assert report.converged and report.residual_final < 1e-8
        seq, _ = sequential_nonlinear_solve(prob, part.grids[0], BE, policy)
        assert np.max(np.abs(traj - seq)) <= 1e-6

    def test_iteration_count_is_partition_independent(self):
        prob = forced_riccati()
        counts = []
        for n1 in (5, 15, 25):
            part = build_explicit([500, n1], t_end=2 * np.pi)
            _, report = newton_schur_solve(prob, part, BE, LinearizationPolicy())
            counts.append(report.outer_iterations)
        assert counts[0] == counts[1] == counts[2]

    def test_hybrid_switch_happens_at_the_threshold(self):
        prob = benchmark_lv()
        part = build_explicit([400, 8], t_end=3.0)
        policy = LinearizationPolicy(mode="hybrid", switch_norm=1e2)
        far = np.tile([40.0, 160.0], (401, 1))
        _, report = newton_schur_solve(prob, part, BE, policy, initial=far)
        assert report.picard_iterations >= 1
        assert report.mode_history[0] == "picard"
        assert "newton" in report.mode_history
        for mode, norm in zip(report.mode_history, report.residual_history):
            assert mode == ("picard" if norm >= 1e2 else "newton")

    def test_requires_two_levels(self):
        prob = forced_riccati()
        with pytest.raises(ValidationError):
            newton_schur_solve(prob, build_explicit([50], t_end=1.0), BE)

    def test_nonconvergence_raises(self):
        prob = benchmark_lv()
        part = build_explicit([200, 4], t_end=3.0)
        policy = LinearizationPolicy(mode="newton", max_iters=1)
        with pytest.raises(NonconvergenceError):
            newton_schur_solve(prob, part, BE, policy)


class TestHarmonicExtension:
    def test_linear_problem_extends_in_one_pass(self):
        prob = random_stable_linear(2, seed=4)
        part = build_explicit([40, 4], t_end=1.0)
        policy = LinearizationPolicy(mode="newton")
        sys0 = build_linear_system(prob, part.grids[0], BE)
        direct = ml_solve(sys0, part)
        bounds = part.subdomain_bounds(0)
        for i in range(4):
            a, b = bounds[i], bounds[i + 1]
            warm = np.tile(prob.u0, (b - a, 1))
            ext = nonlinear_harmonic_extension(prob, part, 0, i, direct[a], warm, BE, policy)
            assert np.allclose(ext.values, direct[a:b], atol=1e-10)

    def test_matches_standalone_window_solve(self):
        from dataclasses import replace
        prob = forced_riccati()
        part = build_explicit([50, 5], t_end=2 * np.pi)
        policy = LinearizationPolicy()
        inflow = np.array([0.5])
        warm = np.tile(inflow, (10, 1))
        ext = nonlinear_harmonic_extension(prob, part, 0, 2, inflow, warm, BE, policy)
        window = part.grids[0][20:31]
        standalone = replace(prob, u0=inflow)
        tight = LinearizationPolicy(tol_global=1e-12)
        ref, _ = sequential_nonlinear_solve(standalone, window, BE, tight)
        assert np.max(np.abs(ext.values - ref[:10])) <= 1e-8

    def test_interior_rows_meet_local_tolerance(self):
        prob = forced_riccati()
        part = build_explicit([60, 6], t_end=2 * np.pi)
        policy = LinearizationPolicy()
        grid = part.grids[0]
        fine = part.fine_nodes(1)
        state = np.tile(prob.u0, (61, 1))
        for i in range(6):
            a, b = fine[i], fine[i + 1]
            ext = nonlinear_harmonic_extension(prob, part, 0, i, state[a],
                                               state[a:b].copy(), BE, policy)
            state[a:b] = ext.values
        res, _ = global_residual(prob, state, grid, BE)
        row_norms = np.linalg.norm(res, axis=1)
        interior = np.ones(61, dtype=bool)
        interior[fine] = False
        assert np.max(row_norms[interior[1:]]) <= policy.tol_local


class TestNonlinearSchurNewton:
    def test_linear_problem_converges_in_one_outer_iteration(self):
        prob = random_stable_linear(2, seed=6)
        part = build_explicit([60, 6], t_end=1.0)
        policy = LinearizationPolicy(mode="newton")
        traj, report = nonlinear_schur_newton_solve(prob, part, 1, BE, policy)
        assert report.outer_iterations == 1
        sys0 = build_linear_system(prob, part.grids[0], BE)
        assert np.max(np.abs(traj - ml_solve(sys0, part))) <= 1e-10

    def test_riccati_agrees_with_newton_schur(self):
        prob = forced_riccati()
        part = build_explicit([500, 15], t_end=2 * np.pi)
        policy = LinearizationPolicy()
        a, rep_a = newton_schur_solve(prob, part, Scheme.dg(0), policy)
        b, rep_b = nonlinear_schur_newton_solve(prob, part, 1, Scheme.dg(0), policy)
        assert rep_b.converged
        assert np.max(np.abs(a - b)) <= 1e-6

    def test_interior_rows_stay_converged_each_iteration(self):
        prob = forced_riccati()
        part = build_explicit([200, 10], t_end=2 * np.pi)
        policy = LinearizationPolicy()
        _, report = nonlinear_schur_newton_solve(prob, part, 1, BE, policy)
        assert len(report.interior_residual_history) == len(report.residual_history)
        assert all(v <= policy.tol_local for v in report.interior_residual_history)
        assert report.residual_history[0] > policy.tol_global

    def test_level_two_solver_on_three_level_partition(self):
        prob = forced_riccati()
        part = build_explicit([120, 12, 3], t_end=2 * np.pi)
        policy = LinearizationPolicy()
        traj, report = nonlinear_schur_newton_solve(prob, part, 2, BE, policy)
        assert report.converged
        seq, _ = sequential_nonlinear_solve(prob, part.grids[0], BE, policy)
        assert np.max(np.abs(traj - seq)) <= 1e-6

    def test_level_three_solver_recurses_through_four_levels(self):
        prob = forced_riccati()
        part = build_explicit([240, 24, 6, 2], t_end=2 * np.pi)
        policy = LinearizationPolicy()
        traj, report = nonlinear_schur_newton_solve(prob, part, 3, BE, policy)
        assert report.converged
        seq, _ = sequential_nonlinear_solve(prob, part.grids[0], BE, policy)
        assert np.max(np.abs(traj - seq)) <= 1e-6

    def test_rejects_bad_level(self):
        prob = forced_riccati()
        part = build_explicit([60, 6], t_end=1.0)
        with pytest.raises(ValidationError):
            nonlinear_schur_newton_solve(prob, part, 2, BE)
        with pytest.raises(ValidationError):
            nonlinear_schur_newton_solve(prob, part, 0, BE)

    def test_lotka_volterra_benchmark_instance_converges(self):
        prob = benchmark_lv()
        part = build_explicit([1000, 20], t_end=3.0)
        policy = LinearizationPolicy()
        traj, report = nonlinear_schur_newton_solve(prob, part, 1, BE, policy)
        assert report.converged and report.residual_final < 1e-8
        assert report.per_level_max  # per-level timings recorded
        seq, _ = sequential_nonlinear_solve(prob, part.grids[0], BE, policy)
        assert np.max(np.abs(traj - seq)) <= 1e-6


class TestSchurJacobianConsistency:
    def test_interface_jacobian_matches_directional_finite_difference(self):
        # The assembled interface system must be the derivative of the
        # nonlinear interface residual with respect to the interface values.
        prob = forced_riccati()
        part = build_explicit([60, 6], t_end=2 * np.pi)
        # Local solves far below the FD step, so extension noise stays out of
        # the difference quotient.
        policy = LinearizationPolicy(mode="newton", tol_local=1e-13)
        grid = part.grids[0]
        fine = part.fine_nodes(1)
        rng = np.random.default_rng(3)
        z = np.array([[np.sin(grid[f]) + 0.05] for f in fine])

        def interface_residual(zvals):
            state = np.empty((61, 1))
            for i in range(6):
                a, b = fine[i], fine[i + 1]
                warm = np.tile(zvals[i], (b - a, 1))
                ext = nonlinear_harmonic_extension(prob, part, 0, i, zvals[i],
                                                   warm, BE, policy)
                state[a:b] = ext.values
            state[-1] = zvals[-1]
            res, _ = global_residual(prob, state, grid, BE)
            return res[fine[1:] - 1].copy(), state

        base, state = interface_residual(z)
        blocks = []
        for i in range(6):
            a, b = fine[i], fine[i + 1]
            blk, _ = _schur_rows(prob, grid[a:b + 1], state[a:b], z[i + 1],
                                 1.0, use_picard=False)
            # De-normalize: _schur_rows returns D^{-1}-scaled blocks.
            dt = grid[b] - grid[b - 1]
            d_close = np.eye(1) + dt * prob.jacobian(grid[b], z[i + 1])
            blocks.append((d_close, blk))
        eps = 1e-6
        direction = rng.normal(size=z.shape)
        direction[0] = 0.0  # initial value is pinned
        plus, _ = interface_residual(z + eps * direction)
        minus, _ = interface_residual(z - eps * direction)
        fd = (plus - minus) / (2 * eps)
        # Jacobian action: row i uses D_i (diagonal) and -D_i @ B_i (subdiagonal).
        action = np.empty_like(fd)
        for i in range(6):
            d_close, blk = blocks[i]
            action[i] = d_close @ direction[i + 1] - d_close @ blk @ direction[i]
        scale = np.max(np.abs(action)) + 1e-30
        assert np.max(np.abs(action - fd)) / scale <= 1e-5
