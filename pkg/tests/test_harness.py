"""Experiment harness: spec parsing, persistence, batch runs, sweeps, plots."""

import csv
import json

import numpy as np
import pytest

from taskbalance.harness import (
    ExperimentSpec,
    SpecError,
    SuiteSpec,
    SweepSpec,
    _run_config_to_dict,
    dominates,
    emit_plot_data,
    load_spec,
    measure_step_micros,
    meta_path_for,
    read_trajectory,
    replay_check,
    run_config_from_dict,
    run_experiment,
    save_spec,
    sweep_ls_front,
)
from taskbalance.metrics import delta_m
from taskbalance.objective import ConfigurationError
from taskbalance.solvers import RunConfig
from taskbalance.suites import quad_suite, toy2_suite

MINIMAL_TOY2 = """
[experiment]
suite = toy2

[run:base]
method = ldc_single
"""

QUAD_SPEC = """
[experiment]
suite = quad
out = {out}

[suite]
tasks = 2
dim = 1
A0 = 1.0
a0 = 0.0
c0 = 0.0
A1 = 1.0
a1 = 2.0
c1 = 0.0

[run:main]
method = ldc_single
T = 200
lambda = 0.5
alpha = 1e-2
stepper_x = gd
stepper_w = gd
x0 = 0.5
record_every = 50
"""


def write_spec(tmp_path, text, name="spec.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadSpec:
    def test_minimal_defaults(self, tmp_path):
        spec = load_spec(write_spec(tmp_path, MINIMAL_TOY2))
        assert spec.suite.name == "toy2"
        assert len(spec.runs) == 1
        cfg = spec.runs[0]
        assert cfg.name == "base"
        assert cfg.method == "ldc_single"
        assert cfg.total_steps == 1000
        assert cfg.bilevel.lam == 0.1
        assert cfg.bilevel.upper.tau_mode == "ones"
        assert cfg.bilevel.norm_mode == "none"
        assert cfg.stepper_x == "adam"

    def test_missing_file(self, tmp_path):
        with pytest.raises(SpecError, match="not found"):
            load_spec(tmp_path / "missing.ini")

    def test_unknown_run_key_named(self, tmp_path):
        text = MINIMAL_TOY2 + "momentum = 0.9\n"
        with pytest.raises(SpecError, match="momentum"):
            load_spec(write_spec(tmp_path, text))

    def test_unknown_section_named(self, tmp_path):
        text = MINIMAL_TOY2 + "\n[plotting]\nstyle = classic\n"
        with pytest.raises(SpecError, match="plotting"):
            load_spec(write_spec(tmp_path, text))

    def test_unknown_experiment_key_named(self, tmp_path):
        text = MINIMAL_TOY2.replace("suite = toy2", "suite = toy2\ngpu = 1")
        with pytest.raises(SpecError, match="gpu"):
            load_spec(write_spec(tmp_path, text))

    def test_matrix_and_center_keys_are_case_sensitive(self, tmp_path):
        # 'a0' is the center vector; a quad section missing the matrix 'A0'
        # must fail even though a lowercase 'a0' is present.
        text = QUAD_SPEC.format(out="results").replace("A0 = 1.0\n", "")
        with pytest.raises(SpecError, match="A0"):
            load_spec(write_spec(tmp_path, text))

    def test_negative_lambda_names_field(self, tmp_path):
        text = MINIMAL_TOY2 + "lambda = -0.1\n"
        with pytest.raises(SpecError, match="lambda"):
            load_spec(write_spec(tmp_path, text))

    def test_quad_spec_round_trip(self, tmp_path):
        spec = load_spec(write_spec(tmp_path, QUAD_SPEC.format(out="results")))
        suite = spec.suite.build()
        assert suite.num_tasks == 2 and suite.dim == 1
        np.testing.assert_allclose(suite.eval_losses(np.array([1.0])),
                                   [0.5, 0.5])

    def test_sweep_section(self, tmp_path):
        text = QUAD_SPEC.format(out="results") + \
            "\n[sweep]\nweights = 0.25, 0.75\nT = 100\n"
        spec = load_spec(write_spec(tmp_path, text))
        np.testing.assert_allclose(spec.sweep.weights, [0.25, 0.75])
        assert spec.sweep.total_steps == 100

    def test_sweep_requires_weights(self, tmp_path):
        text = QUAD_SPEC.format(out="results") + "\n[sweep]\nT = 100\n"
        with pytest.raises(SpecError, match="weights"):
            load_spec(write_spec(tmp_path, text))

    def test_save_load_round_trip_is_bit_identical(self, tmp_path):
        text = QUAD_SPEC.format(out="results") + (
            "tau = ones\ngamma = 1e-8\nnormalization = rescale\n"
            "lr_x = 3e-4\nlr_w = 3e-4\nseed = 7\nls_weights = 0.5, 0.5\n")
        original = load_spec(write_spec(tmp_path, text))
        saved = tmp_path / "saved.ini"
        save_spec(original, saved)
        reloaded = load_spec(saved)
        assert len(reloaded.runs) == len(original.runs)
        for a, b in zip(original.runs, reloaded.runs):
            assert _run_config_to_dict(a) == _run_config_to_dict(b)
        np.testing.assert_array_equal(original.suite.quad_matrices,
                                      reloaded.suite.quad_matrices)
        np.testing.assert_array_equal(original.suite.quad_centers,
                                      reloaded.suite.quad_centers)

    def test_run_config_dict_round_trip(self, tmp_path):
        spec = load_spec(write_spec(tmp_path, QUAD_SPEC.format(out="results")))
        d = _run_config_to_dict(spec.runs[0])
        assert _run_config_to_dict(run_config_from_dict(d)) == d


class TestRunExperiment:
    def test_writes_trajectory_meta_and_summary(self, tmp_path):
        spec = load_spec(write_spec(tmp_path, QUAD_SPEC.format(out=tmp_path / "out")))
        summary = run_experiment(spec)
        out = tmp_path / "out"
        assert (out / "main.csv").exists()
        assert (out / "main.meta.json").exists()
        assert (out / "summary.json").exists()
        assert summary["num_runs"] == 1
        assert not summary["runs"][0]["diverged"]
        data = read_trajectory(out / "main.csv")
        assert list(data["step"]) == [50, 100, 150, 200]

    def test_empty_run_list(self, tmp_path):
        spec = ExperimentSpec(suite=SuiteSpec(name="toy2"),
                              out_dir=tmp_path / "empty")
        summary = run_experiment(spec)
        assert summary["num_runs"] == 0
        assert (tmp_path / "empty" / "summary.json").exists()

    def test_five_toy_runs_produce_five_trajectories(self, tmp_path):
        runs = [RunConfig(name=f"init-{i}", method="ldc_single",
                          total_steps=20, x0=np.array(x0), record_every=10)
                for i, x0 in enumerate([(-8.5, 7.5), (-8.5, 5.0), (0.0, 0.0),
                                        (9.0, 9.0), (10.0, -8.0)])]
        spec = ExperimentSpec(suite=SuiteSpec(name="toy2"), runs=runs,
                              out_dir=tmp_path / "toy")
        summary = run_experiment(spec, threads=2)
        assert summary["num_runs"] == 5
        for i in range(5):
            assert (tmp_path / "toy" / f"init-{i}.csv").exists()

    def test_rerun_is_byte_identical_excluding_timing(self, tmp_path):
        def run_once(tag):
            spec = load_spec(write_spec(
                tmp_path, QUAD_SPEC.format(out=tmp_path / tag), name=f"{tag}.ini"))
            run_experiment(spec)
            with open(tmp_path / tag / "main.csv", newline="") as fh:
                rows = list(csv.reader(fh))
            t_col = rows[0].index("wall_micros")
            for row in rows[1:]:
                row[t_col] = ""
            return rows

        assert run_once("a") == run_once("b")

    def test_replay_check(self, tmp_path):
        spec = load_spec(write_spec(tmp_path, QUAD_SPEC.format(out=tmp_path / "out")))
        run_experiment(spec)
        traj = tmp_path / "out" / "main.csv"
        assert replay_check(traj, meta_path_for(traj)) <= 1e-9

    def test_baseline_comparison_matches_direct_delta_m(self, tmp_path):
        text = QUAD_SPEC.format(out=tmp_path / "out") + (
            "\n[run:ref]\nmethod = ls\nls_weights = 0.5, 0.5\nT = 200\n"
            "alpha = 1e-2\nstepper_x = gd\nx0 = 0.5\nrecord_every = 50\n")
        text = text.replace("[experiment]", "[experiment]\nbaseline_run = ref")
        spec = load_spec(write_spec(tmp_path, text))
        summary = run_experiment(spec)
        by_name = {r["name"]: r for r in summary["runs"]}
        expected = delta_m(by_name["main"]["final_losses"],
                           by_name["ref"]["final_losses"],
                           ["lower_better", "lower_better"])
        assert summary["delta_m_vs_baseline"]["main"] == pytest.approx(expected)

    def test_diverged_run_is_isolated(self, tmp_path):
        text = QUAD_SPEC.format(out=tmp_path / "out") + (
            "\n[run:explodes]\nmethod = ls\nls_weights = 0.9, 0.1\nT = 100\n"
            "stepper_x = gd\nlr_x = 1e9\nx0 = 1.0\n")
        spec = load_spec(write_spec(tmp_path, text))
        summary = run_experiment(spec)
        by_name = {r["name"]: r for r in summary["runs"]}
        assert by_name["explodes"]["diverged"]
        assert not by_name["main"]["diverged"]


class TestDominates:
    def test_strict(self):
        assert dominates([1.0, 1.0], [2.0, 2.0])
        assert dominates([1.0, 2.0], [2.0, 2.0])
        assert not dominates([1.0, 3.0], [2.0, 2.0])
        assert not dominates([2.0, 2.0], [2.0, 2.0])


class TestSweepLsFront:
    def suite(self):
        return quad_suite([[[1.0]], [[1.0]]], [[0.0], [2.0]])

    def test_points_land_on_analytic_front(self):
        suite = self.suite()
        weights = [0.25, 0.5, 0.75]
        rows = sweep_ls_front(suite, weights, total_steps=5000, alpha=0.1)
        for row in rows:
            w = np.array([row["w1"], 1 - row["w1"]])
            expected = suite.eval_losses(suite.lower_level_solution(w))
            np.testing.assert_allclose([row["l1"], row["l2"]], expected,
                                       atol=1e-6)

    def test_vertex_weight_reaches_task_optimum(self):
        rows = sweep_ls_front(self.suite(), [1.0], total_steps=5000, alpha=0.1)
        assert rows[0]["l1"] == pytest.approx(0.0, abs=1e-10)
        np.testing.assert_allclose(rows[0]["x"], [0.0], atol=1e-5)

    def test_dominance_flags(self):
        rows = sweep_ls_front(self.suite(), [0.5], total_steps=5000, alpha=0.1,
                              ldc_points=[np.array([0.0, 0.0])])
        assert rows[0]["dominated_by_ldc"]
        rows = sweep_ls_front(self.suite(), [0.5], total_steps=5000, alpha=0.1,
                              ldc_points=[np.array([10.0, 10.0])])
        assert not rows[0]["dominated_by_ldc"]

    def test_grid_changes_one_row(self):
        full = sweep_ls_front(self.suite(), [0.3, 0.7], total_steps=1000,
                              alpha=0.1)
        partial = sweep_ls_front(self.suite(), [0.3], total_steps=1000,
                                 alpha=0.1)
        assert full[0] == partial[0]
        assert len(full) == 2

    def test_non_two_task_rejected(self):
        suite = quad_suite(np.stack([np.eye(2)] * 3),
                           np.zeros((3, 2)) + np.arange(3)[:, None])
        with pytest.raises(ConfigurationError):
            sweep_ls_front(suite, [0.5])


class TestTiming:
    def test_measure_step_micros_positive(self):
        suite = quad_suite([[[1.0]], [[1.0]]], [[0.0], [2.0]])
        for method in ("ldc_single", "ldc_double", "ls", "mgda"):
            micros = measure_step_micros(method, suite, steps=20,
                                         repetitions=2, warmup=5)
            assert micros > 0


class TestEmitPlotData:
    @pytest.fixture
    def trajectories(self, tmp_path):
        text = QUAD_SPEC.format(out=tmp_path / "out")
        path = tmp_path / "spec.ini"
        path.write_text(text)
        run_experiment(load_spec(path))
        return [tmp_path / "out" / "main.csv"], tmp_path

    def test_loss_space_columns(self, trajectories):
        paths, tmp_path = trajectories
        written = emit_plot_data(paths, "loss_space", tmp_path / "plots")
        lines = written[0].read_text().strip().splitlines()
        assert lines[0].startswith("# L1 L2")
        assert len(lines) == 5  # header + 4 recorded rows

    def test_weights_rows_sum_to_one(self, trajectories):
        paths, tmp_path = trajectories
        written = emit_plot_data(paths, "weights_over_time", tmp_path / "plots")
        rows = [list(map(float, ln.split()))
                for ln in written[0].read_text().splitlines()[1:]]
        for row in rows:
            assert abs(sum(row[1:]) - 1.0) <= 1e-9

    def test_residual_over_time(self, trajectories):
        paths, tmp_path = trajectories
        written = emit_plot_data(paths, "residual_over_time", tmp_path / "plots")
        assert "minnorm_residual" in written[0].read_text().splitlines()[0]

    def test_timing_bars_include_ratio(self, tmp_path):
        # Two trajectories whose metadata name the two compared methods.
        for method in ("ldc_single", "ls"):
            extra = "ls_weights = 0.5, 0.5\n" if method == "ls" else ""
            text = QUAD_SPEC.format(out=tmp_path / method).replace(
                "method = ldc_single", f"method = {method}\n{extra}")
            path = tmp_path / f"{method}.ini"
            path.write_text(text)
            run_experiment(load_spec(path))
        paths = [tmp_path / "ldc_single" / "main.csv",
                 tmp_path / "ls" / "main.csv"]
        written = emit_plot_data(paths, "timing_bars", tmp_path / "plots")
        content = written[0].read_text()
        assert "ldc_single/ls ratio" in content

    def test_unknown_kind_rejected(self, trajectories):
        paths, tmp_path = trajectories
        with pytest.raises(ConfigurationError, match="scatter"):
            emit_plot_data(paths, "scatter", tmp_path / "plots")

    def test_render_svg(self, trajectories):
        paths, tmp_path = trajectories
        emit_plot_data(paths, "weights_over_time", tmp_path / "plots",
                       render=True)
        assert (tmp_path / "plots" / "main.weights_over_time.svg").exists()
