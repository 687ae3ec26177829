import json
import re

import numpy as np
import pytest

from qbm import harness
from qbm.charts import chart_series, render_chart
from qbm.cli import main
from qbm.harness import (
    TRACE_COLUMNS,
    AnnealerSchedulePoint,
    ConfigError,
    ExperimentConfig,
    annealer_parameter_map,
    emit_trace,
    initial_parameters,
    read_trace,
    run_experiment,
)
from qbm.optim import TraceRow, TrainingTrace


def _trace(rows):
    t = TrainingTrace(status="converged")
    for r in rows:
        t.append(TraceRow(*r))
    return t


def _small(tmp_path, **overrides):
    values = dict(experiment="fully-visible", machines="BM, QBM, bQBM", n_visible=4, modes=2,
                  max_iters=8, charts=False, out_dir=str(tmp_path / "run"))
    values.update(overrides)
    return ExperimentConfig.from_mapping(values)


class TestConfig:
    def test_load_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: semi-restricted\nmachines: BM, bQBM-CE\nn_visible: 6\nn_hidden: 2\n"
                        "seed: 4\nmax_iters: 7\nout_dir: somewhere\n")
        c = ExperimentConfig.load(path)
        assert c.machines == ("BM", "bQBM-CE")
        assert (c.n_visible, c.n_hidden, c.seed, c.max_iters) == (6, 2, 4, 7)

    def test_list_machines(self):
        c = ExperimentConfig.from_mapping({"experiment": "fully-visible", "machines": ["QBM"]})
        assert c.machines == ("QBM",)

    @pytest.mark.parametrize("values", [
        {"experiment": "fully-visible", "machines": ""},
        {"experiment": "fully-visible", "machines": "BM, XBM"},
        {"experiment": "fully-visible", "machines": "bQBM-CE"},
        {"experiment": "fully-visible", "n_hidden": 2},
        {"experiment": "supervised-generative", "n_outputs": 0},
        {"experiment": "nonsense"},
        {"experiment": "fully-visible", "colour": "red"},
        {"experiment": "fully-visible", "optimizer_settings": {"eta": 1}},
    ])
    def test_invalid(self, values):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping(values)

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("- just\n- a list\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(path)

    def test_machine_roles(self):
        c = ExperimentConfig.from_mapping({"experiment": "semi-restricted", "n_visible": 4, "n_hidden": 1,
                                           "machines": "BM, QBM, bQBM, bQBM-CE"})
        assert [c.loss(m) for m in c.machines] == ["exact", "exact", "bound-quantum", "bound-classical"]
        assert c.optimizer_config("BM").gamma_fixed == 0.0
        assert c.optimizer_config("QBM").train_gamma == "shared"
        assert c.optimizer_config("QBM").gamma_fixed == 0.1
        assert c.optimizer_config("bQBM").gamma_fixed == 2.0
        assert c.optimizer_config("bQBM").train_gamma == "fixed"
        full = ExperimentConfig.from_mapping({"experiment": "fully-visible"})
        assert full.loss("bQBM") == "bound"

    def test_bm_iteration_cap(self):
        c = ExperimentConfig.from_mapping({"experiment": "fully-visible", "max_iters": 7})
        assert c.optimizer_config("BM").max_iters == 7
        c = ExperimentConfig.from_mapping({"experiment": "fully-visible", "max_iters": 7, "bm_max_iters": 30})
        assert c.optimizer_config("BM").max_iters == 30
        assert c.optimizer_config("QBM").max_iters == 7
        assert c.optimizer_config("bQBM").max_iters == 7

    def test_initialization_is_seeded_and_small(self, tmp_path):
        a = initial_parameters(_small(tmp_path, seed=3))
        b = initial_parameters(_small(tmp_path, seed=3))
        np.testing.assert_array_equal(a.w, b.w)
        assert np.all(np.abs(a.b) <= 0.1) and np.all(np.abs(a.w) <= 0.1)
        c = initial_parameters(_small(tmp_path, experiment="semi-restricted", n_hidden=2))
        assert c.w[4, 5] == 0.0


class TestTraceFiles:
    def test_single_row(self, tmp_path):
        path = emit_trace(_trace([(0, 1.5, 0.25, -1.0, 0.0, 0.0, 0.1, 0.0)]), tmp_path / "t.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,loss,kl,e_cl,e_q,gamma,grad_norm,wall_ms"
        assert len(lines) == 2

    def test_round_trip_is_bit_exact(self, tmp_path, rng):
        rows = [(i, *rng.normal(size=7)) for i in range(5)]
        rows[2] = (2, np.pi, 1e-300, -np.e, 5e-324, 2.0 / 3.0, 1e300, 0.1)
        original = _trace(rows)
        loaded = read_trace(emit_trace(original, tmp_path / "t.csv"))
        for a, b in zip(original.rows, loaded.rows):
            assert tuple(a) == tuple(b)
        assert TRACE_COLUMNS == TraceRow._fields

    def test_empty_trace_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_trace(TrainingTrace(), tmp_path / "t.csv")

    def test_bad_header(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_trace(path)


class TestRunExperiment:
    def test_artifacts(self, tmp_path):
        config = _small(tmp_path, charts=True)
        results = run_experiment(config)
        out = tmp_path / "run"
        for m in ("BM", "QBM", "bQBM"):
            assert (out / f"{m}.csv").exists()
            summary = json.loads((out / f"{m}.summary.json").read_text())
            for key in ("machine", "final_kl", "final_gamma", "final_e_cl", "final_e_q", "iterations", "status"):
                assert key in summary
        assert (out / "kl.svg").exists() and (out / "energy.svg").exists()
        assert json.loads((out / "config.json").read_text())["n_visible"] == 4
        assert not any(r.errored for r in results)

    def test_bm_rows_are_classical(self, tmp_path):
        run_experiment(_small(tmp_path, machines="BM"))
        trace = read_trace(tmp_path / "run" / "BM.csv")
        assert np.all(trace.column("e_q") == 0.0) and np.all(trace.column("gamma") == 0.0)

    def test_bqbm_keeps_fixed_gamma(self, tmp_path):
        run_experiment(_small(tmp_path, machines="bQBM"))
        np.testing.assert_array_equal(read_trace(tmp_path / "run" / "bQBM.csv").column("gamma"), 2.0)

    def test_deterministic(self, tmp_path):
        run_experiment(_small(tmp_path, out_dir=str(tmp_path / "a")))
        run_experiment(_small(tmp_path, out_dir=str(tmp_path / "b")))
        for m in ("BM", "QBM", "bQBM"):
            assert (tmp_path / "a" / f"{m}.csv").read_bytes() == (tmp_path / "b" / f"{m}.csv").read_bytes()

    def test_parallel_matches_serial(self, tmp_path):
        run_experiment(_small(tmp_path, out_dir=str(tmp_path / "serial")), workers=1)
        run_experiment(_small(tmp_path, out_dir=str(tmp_path / "parallel")), workers=2)
        for m in ("BM", "QBM", "bQBM"):
            assert (tmp_path / "serial" / f"{m}.csv").read_bytes() == \
                (tmp_path / "parallel" / f"{m}.csv").read_bytes()

    def test_thread_override(self, monkeypatch):
        monkeypatch.setenv("QBM_THREADS", "3")
        assert harness._worker_count() == 3
        monkeypatch.setenv("QBM_THREADS", "many")
        with pytest.raises(ConfigError):
            harness._worker_count()

    def test_semi_restricted(self, tmp_path):
        results = run_experiment(_small(tmp_path, experiment="semi-restricted", n_visible=3, n_hidden=2,
                                        machines="BM, QBM, bQBM, bQBM-CE"))
        assert [r.machine for r in results] == ["BM", "QBM", "bQBM", "bQBM-CE"]
        assert not any(r.errored for r in results)

    def test_supervised_generative_logs_conditionals(self, tmp_path):
        run_experiment(_small(tmp_path, experiment="supervised-generative", n_visible=5, n_outputs=2,
                              modes=4, machines="BM, QBM"))
        out = tmp_path / "run"
        lines = (out / "QBM.supervised.csv").read_text().splitlines()
        assert lines[0] == "iter,joint_kl,conditional_kl,clamped_conditional_kl"
        assert len(lines) == len((out / "QBM.csv").read_text().splitlines())
        summary = json.loads((out / "BM.summary.json").read_text())
        # classical machines: clamped conditionals are the exact conditionals
        assert summary["final_clamped_conditional_kl"] == pytest.approx(summary["final_conditional_kl"], abs=1e-10)

    def test_supervised_discriminative(self, tmp_path):
        results = run_experiment(_small(tmp_path, experiment="supervised-discriminative", n_visible=5,
                                        n_outputs=2, n_hidden=1, modes=4))
        assert not any(r.errored for r in results)
        assert results[1].summary["final_kl"] < read_trace(tmp_path / "run" / "QBM.csv").rows[0].kl

    def test_failure_still_writes_summary(self, tmp_path, monkeypatch):
        def broken(config):
            raise FloatingPointError("boom")
        monkeypatch.setattr(harness, "training_data", broken)
        results = run_experiment(_small(tmp_path, machines="BM"))
        summary = json.loads((tmp_path / "run" / "BM.summary.json").read_text())
        assert results[0].errored
        assert summary["status"].startswith("error")


class TestCharts:
    def _groups(self, svg):
        return re.findall(r'<g id="trace-([^"]+)"', svg)

    def test_three_polylines(self, tmp_path):
        traces = {m: _trace([(i, 1.0 / (i + 1), 0.5 / (i + 1), -i, -0.1 * i, 0.1, 1.0, 0.0) for i in range(4)])
                  for m in ("BM", "QBM", "bQBM")}
        svg = (tmp_path / "kl.svg")
        render_chart(traces, "kl", svg)
        text = svg.read_text()
        assert self._groups(text) == ["BM", "QBM", "bQBM"]
        assert "KL divergence" in text and "iteration" in text

    def test_single_point_has_marker(self, tmp_path):
        svg = tmp_path / "one.svg"
        render_chart({"BM": _trace([(0, 1.0, 0.5, -1.0, 0.0, 0.0, 1.0, 0.0)])}, "kl", svg)
        group = svg.read_text().split('<g id="trace-BM">')[1].split("</g>")[0]
        assert "<use" in group

    def test_energy_series_order(self):
        t = _trace([(0, 1, 1, -0.5, -0.1, 0.1, 1, 0), (1, 1, 1, -2.0, -0.3, 0.5, 1, 0),
                    (2, 1, 1, -1.0, -0.7, 0.8, 1, 0)])
        x, y = chart_series({"QBM": t}, "energy")["QBM"]
        np.testing.assert_array_equal(x, [0.5, 2.0, 1.0])
        np.testing.assert_array_equal(y, [0.1, 0.3, 0.7])

    def test_byte_stable(self, tmp_path):
        t = {"BM": _trace([(0, 1.0, 0.5, -1.0, 0.0, 0.0, 1.0, 0.0), (1, 0.9, 0.4, -1.1, 0.0, 0.0, 0.5, 0.0)])}
        render_chart(t, "kl", tmp_path / "a.svg")
        render_chart(t, "kl", tmp_path / "b.svg")
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_errors(self, tmp_path):
        with pytest.raises(ValueError):
            render_chart({}, "kl", tmp_path / "x.svg")
        with pytest.raises(ValueError):
            render_chart({"BM": TrainingTrace()}, "kl", tmp_path / "x.svg")
        with pytest.raises(ValueError):
            render_chart({"BM": _trace([(0, 1, 1, 1, 1, 1, 1, 1)])}, "speed", tmp_path / "x.svg")


class TestAnnealerMap:
    def test_direct_multiplication(self):
        p = annealer_parameter_map(AnnealerSchedulePoint(2.0, 0.5, 1.0, h=(0.3,)))
        np.testing.assert_allclose(p.gamma, [1.0])
        np.testing.assert_allclose(p.b, [0.6])

    def test_classical_limit(self):
        p = annealer_parameter_map(AnnealerSchedulePoint(1.5, 0.0, 2.0, h=(0.1, -0.2), j=(0.4,)))
        assert p.is_classical
        assert p.w[0, 1] == pytest.approx(1.2)

    def test_linear_in_beta(self):
        a = annealer_parameter_map(AnnealerSchedulePoint(1.0, 0.3, 0.7, h=(0.1, 0.2, -0.4), j=(0.5, -0.1, 0.2)))
        b = annealer_parameter_map(AnnealerSchedulePoint(2.0, 0.3, 0.7, h=(0.1, 0.2, -0.4), j=(0.5, -0.1, 0.2)))
        for name in ("b", "w", "gamma"):
            np.testing.assert_allclose(getattr(b, name), 2 * getattr(a, name), rtol=1e-15)

    def test_pair_order(self):
        p = annealer_parameter_map(AnnealerSchedulePoint(1.0, 0.0, 1.0, h=(0, 0, 0), j=(1, 2, 3)))
        assert (p.w[0, 1], p.w[0, 2], p.w[1, 2]) == (1, 2, 3)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, -0.5)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            AnnealerSchedulePoint(*args)

    def test_wrong_coupling_count(self):
        with pytest.raises(ValueError):
            annealer_parameter_map(AnnealerSchedulePoint(1.0, 1.0, 1.0, h=(0, 0), j=(1, 2)))


class TestCLI:
    def _config(self, tmp_path, extra=""):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: fully-visible\nmachines: BM, QBM\nn_visible: 3\nmodes: 2\nmax_iters: 5\n"
                        f"out_dir: {tmp_path / 'out'}\n{extra}")
        return path

    def test_train(self, tmp_path, capsys):
        assert main(["train", str(self._config(tmp_path))]) == 0
        assert "QBM" in capsys.readouterr().out
        assert (tmp_path / "out" / "QBM.csv").exists()

    def test_out_dir_override(self, tmp_path):
        assert main(["train", str(self._config(tmp_path)), "--out-dir", str(tmp_path / "other")]) == 0
        assert (tmp_path / "other" / "BM.summary.json").exists()

    def test_bad_config_exit_code(self, tmp_path):
        assert main(["train", str(self._config(tmp_path, "colour: red\n"))]) == 2
        assert main(["train", str(tmp_path / "missing.yaml")]) == 2

    def test_failed_run_exit_code(self, tmp_path, monkeypatch):
        def broken(config):
            raise FloatingPointError("boom")
        monkeypatch.setattr(harness, "training_data", broken)
        assert main(["train", str(self._config(tmp_path))]) == 1

    def test_chart(self, tmp_path):
        main(["train", str(self._config(tmp_path))])
        out = tmp_path / "e.svg"
        assert main(["chart", str(tmp_path / "out" / "BM.csv"), str(tmp_path / "out" / "QBM.csv"),
                     "--metric", "energy", "--out", str(out)]) == 0
        assert re.findall(r'<g id="trace-([^"]+)"', out.read_text()) == ["BM", "QBM"]

    def test_annealer_map(self, capsys):
        assert main(["annealer-map", "--beta", "2", "--a", "0.5", "--b", "1", "--h", "0.3"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out == {"gamma": [1.0], "b": [0.6], "w": []}

    def test_annealer_map_invalid(self, capsys):
        assert main(["annealer-map", "--beta", "0", "--a", "0.5", "--b", "1", "--h", "0.3"]) == 2
