import csv
import json
import math

import numpy as np
import pytest

from timeschur import ValidationError, cli
from timeschur.bench import (
    CSV_COLUMNS,
    ExperimentSpec,
    emit_figure_data,
    parse_solver,
    run_three_level,
    run_weak_scaling,
    verify,
    write_rows,
)

LV = dict(problem="lotka-volterra", solver="newton-schur")


def read_csv(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


class TestSpec:
    def test_fingerprint_is_stable_and_sensitive(self):
        a = ExperimentSpec(**LV)
        b = ExperimentSpec(**LV)
        c = ExperimentSpec(**{**LV, "n0": 77})
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != c.fingerprint()

    def test_solver_parsing(self):
        assert parse_solver("sequential") == ("sequential", None)
        assert parse_solver("newton-schur") == ("newton-schur", None)
        assert parse_solver("nlschur:2") == ("nlschur", 2)
        for bad in ("nlschur:0", "nlschur:x", "multigrid"):
            with pytest.raises(ValidationError):
                parse_solver(bad)

    def test_rejects_zero_reps(self):
        with pytest.raises(ValidationError):
            ExperimentSpec(reps=0)


class TestWeakScaling:
    def test_rows_have_expected_shape(self, tmp_path):
        spec = ExperimentSpec(**LV, reps=2)
        rows = run_weak_scaling(spec, [2, 4], 30)
        # per n1: one row per level (0 and 1) plus one sequential baseline
        assert len(rows) == 2 * 3
        path = write_rows(rows, tmp_path / "weak.csv")
        parsed = read_csv(path)
        assert list(parsed[0].keys()) == CSV_COLUMNS
        levels = [r["level"] for r in parsed if r["n1"] == "2"]
        assert levels == ["0", "1", "seq"]
        assert all(r["status"] == "ok" for r in parsed)

    def test_newton_outer_counts_stay_constant_across_sweep(self):
        spec = ExperimentSpec(**LV)
        rows = run_weak_scaling(spec, [2, 5, 10], 50)
        outer = {r["n1"]: r["outer_iters"] for r in rows
                 if r["variant"] == "parallel" and r["level"] == 0}
        assert len(set(outer.values())) == 1

    def test_degenerate_single_step_point(self):
        spec = ExperimentSpec(**LV)
        rows = run_weak_scaling(spec, [1], 1)
        assert all(r["status"] == "ok" for r in rows)

    def test_rejects_unsorted_n1(self):
        with pytest.raises(ValidationError):
            run_weak_scaling(ExperimentSpec(**LV), [4, 2], 10)

    def test_solver_failure_becomes_row_and_run_continues(self):
        spec = ExperimentSpec(**LV, mode="newton", max_iters=1)
        rows = run_weak_scaling(spec, [2, 4], 25)
        failed = [r for r in rows if r["status"] == "failed"]
        assert len(failed) == 2
        assert all("convergence" in r["message"] for r in failed)
        # sequential baselines still present for every sweep point
        assert sum(1 for r in rows if r["level"] == "seq") == 2

    def test_wall_columns_report_min_over_reps(self, monkeypatch):
        from timeschur import bench, SolverReport

        calls = {"n": 0}

        def fake_run_solver(spec, partition=None, workers=None):
            calls["n"] += 1
            report = SolverReport(solver=spec.solver, workers=workers or 1)
            report.per_level_max = {0: float(calls["n"])}
            report.per_level_sum = {0: 10.0 * calls["n"]}
            report.residual_history = [1e-12]
            return np.zeros((3, 2)), report

        monkeypatch.setattr(bench, "run_solver", fake_run_solver)
        spec = ExperimentSpec(**LV, reps=3)
        _, _, tmax, tsum = bench._run_with_reps(spec, spec.build_partition(), 2)
        assert tmax == {0: 1.0}
        assert tsum == {0: 10.0}

    def test_level0_critical_path_stays_flat(self):
        spec = ExperimentSpec(**LV, reps=3)
        rows = run_weak_scaling(spec, [2, 4, 8], 50)
        walls = [float(r["wall_s_max"]) for r in rows
                 if r["variant"] == "parallel" and r["level"] == 0]
        assert max(walls) / min(walls) <= 2.0


class TestThreeLevel:
    def test_rows_cover_all_levels(self):
        spec = ExperimentSpec(**LV, n0=400, n1=40, n2=4)
        rows = run_three_level(spec)
        assert [r["level"] for r in rows] == [0, 1, 2]
        assert all(r["n2"] == 4 for r in rows)

    def test_adaptive_coarsening_balances_the_top(self):
        spec = ExperimentSpec(**LV, n0=2000, n1=100, adaptive=True)
        rows = run_three_level(spec)
        assert all(r["n2"] == 10 for r in rows)  # round(sqrt(100))

    def test_rejects_non_decreasing_counts(self):
        with pytest.raises(ValidationError):
            run_three_level(ExperimentSpec(**LV, n0=400, n1=40, n2=40))
        with pytest.raises(ValidationError):
            run_three_level(ExperimentSpec(**LV, n0=400, n1=40, n2=None))

    def test_two_level_comparison_rows(self):
        spec = ExperimentSpec(**LV, n0=400, n1=40, n2=4)
        rows = run_three_level(spec, compare_two_level=True)
        variants = {r["variant"] for r in rows}
        assert variants == {"three-level", "two-level"}

    def test_equal_local_sizes_give_same_order_walls(self):
        # Level-0 and level-1 subdomains both hold 30 steps. Desk-scale
        # preemption noise widens the parity between levels, hence the loose factor.
        spec = ExperimentSpec(**LV, n0=2700, n1=90, n2=3, reps=3)
        rows = run_three_level(spec)
        walls = {r["level"]: float(r["wall_s_max"]) for r in rows}
        ratio = max(walls[0], walls[1]) / min(walls[0], walls[1])
        assert ratio <= 6.0


class TestFigureData:
    def test_coarse_shapes_identity_propagation(self, tmp_path):
        rows, csv_path, script_path = emit_figure_data(
            "coarse_shapes", ExperimentSpec(scheme="dg0"), tmp_path / "shapes.csv")
        assert csv_path.exists() and script_path.exists()
        ext = {t: v for t, series, v in rows if series == "extension"}
        third = math.pi / 3
        for t, v in ext.items():
            inside = third - 1e-12 <= t < 2 * third - 1e-12
            assert v == pytest.approx(1.0 if inside else 0.0, abs=1e-12)

    def test_decomposition_sums_to_full_solution(self, tmp_path):
        rows, _, _ = emit_figure_data(
            "decomposition", ExperimentSpec(scheme="be"), tmp_path / "dec.csv")
        series = {}
        for t, name, v in rows:
            series.setdefault(name, []).append(v)
        full = np.array(series["full"])
        total = np.array(series["coarse"]) + np.array(series["fine"])
        assert np.max(np.abs(full - total)) <= 1e-12

    def test_lv_phase_emits_both_species(self, tmp_path):
        rows, _, _ = emit_figure_data(
            "lv_phase", ExperimentSpec(n0=500), tmp_path / "phase.csv")
        names = {name for _, name, _ in rows}
        assert names == {"prey", "predator"}
        prey = [v for _, name, v in rows if name == "prey"]
        assert min(prey) > 0.0

    def test_convergence_history_reaches_tolerance(self, tmp_path):
        rows, csv_path, script_path = emit_figure_data(
            "convergence", ExperimentSpec(), tmp_path / "conv.csv")
        values = [v for _, _, v in rows]
        assert values[-1] < 1e-8
        assert len(values) >= 3
        assert "semilogy" in script_path.read_text()

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            emit_figure_data("spectrum", ExperimentSpec(), tmp_path / "x.csv")


class TestVerify:
    def test_default_suite_passes(self):
        checks = verify()
        assert all(c.passed for c in checks), [c.name for c in checks if not c.passed]
        names = {c.name for c in checks}
        assert names == {"linear_exactness", "petrov_galerkin",
                         "newton_partition_independence", "nonlinear_agreement"}

    def test_injected_sign_bug_is_caught(self, monkeypatch):
        # Flip the sign of the closing-step product: the Petrov-Galerkin
        # cross-check must fail while the dense route stays intact.
        from timeschur import bench, schur

        real = schur.assemble_schur

        def broken(sys, v, extension, bounds):
            out = real(sys, v, extension, bounds)
            out.phis = -out.phis
            return out

        monkeypatch.setattr(bench, "assemble_schur", broken)
        checks = {c.name: c for c in verify()}
        assert not checks["petrov_galerkin"].passed


class TestCsvStability:
    def test_identical_specs_give_identical_non_timing_columns(self, tmp_path):
        spec = ExperimentSpec(**LV)
        timing = {"wall_s_max", "wall_s_sum"}
        runs = []
        for tag in ("a", "b"):
            rows = run_weak_scaling(spec, [2, 4], 25)
            path = write_rows(rows, tmp_path / f"{tag}.csv")
            stripped = [{k: v for k, v in row.items() if k not in timing}
                        for row in read_csv(path)]
            runs.append(stripped)
        assert runs[0] == runs[1]


class TestCli:
    def test_solve_writes_trajectory(self, tmp_path, capsys):
        out = tmp_path / "traj.csv"
        code = cli.main(["solve", "--problem", "riccati", "--nsteps", "200",
                        "--subdomains", "10", "--out", str(out)])
        assert code == 0
        rows = read_csv(out)
        assert len(rows) == 201
        assert abs(float(rows[-1]["u0"]) - math.sin(2 * math.pi)) < 0.1
        assert "outer iterations" in capsys.readouterr().out

    def test_solve_with_ratio_builds_hierarchy(self, capsys):
        code = cli.main(["solve", "--problem", "decay", "--lam", "2.0",
                        "--nsteps", "64", "--ratio", "4", "--solver", "sequential"])
        assert code == 0
        assert "levels=(64, 16, 4, 1)" in capsys.readouterr().out

    def test_weak_scaling_csv(self, tmp_path):
        out = tmp_path / "weak.csv"
        code = cli.main(["weak-scaling", "--local-size", "20", "--n1-list", "2,4",
                        "--reps", "1", "--out", str(out)])
        assert code == 0
        assert len(read_csv(out)) == 6

    def test_three_level_adaptive(self, tmp_path):
        out = tmp_path / "three.csv"
        code = cli.main(["three-level", "--nsteps", "400", "--subdomains", "100",
                        "--adaptive", "--out", str(out)])
        assert code == 0
        rows = read_csv(out)
        assert rows[0]["n2"] == "10"

    def test_figure_subcommand(self, tmp_path):
        out = tmp_path / "fig.csv"
        code = cli.main(["figure", "--kind", "lv-phase", "--nsteps", "300",
                        "--out", str(out)])
        assert code == 0
        assert out.exists()
        assert (tmp_path / "fig_plot.py").exists()

    def test_verify_subcommand(self, tmp_path, capsys):
        out = tmp_path / "verify.json"
        code = cli.main(["verify", "--out", str(out)])
        assert code == 0
        assert "PASS linear_exactness" in capsys.readouterr().out
        assert all(entry["passed"] for entry in json.loads(out.read_text()))

    def test_validation_error_exits_2(self):
        code = cli.main(["three-level", "--nsteps", "100", "--subdomains", "10",
                        "--n2", "10"])
        assert code == 2

    def test_nonconvergence_exits_3(self):
        code = cli.main(["solve", "--problem", "lotka-volterra", "--nsteps", "100",
                        "--subdomains", "5", "--max-iters", "1"])
        assert code == 3
