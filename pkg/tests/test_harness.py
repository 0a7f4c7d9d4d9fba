import json
import subprocess
import sys

import pytest

from stochch.harness import cli
from stochch.harness.config import ConfigError, ExperimentConfig, ModelConfig, apply_overrides, load_config
from stochch.harness.experiments import blowup_exponent_check, calibrate_C1, trace_dichotomy
from stochch.harness.parallel import RunRecord, resolve_workers, run_parallel
from stochch.analysis import EventSpec
from stochch.noise import NoiseSpec


def small_stochastic(tmp_path, name="run"):
    return ExperimentConfig(
        kind="stochastic-error",
        epsilon_ladder=[0.3, 0.25],
        model=ModelConfig(n=16, T=0.02),
        noise=NoiseSpec(sigma=1.0),
        samples=3,
        base_seed=11,
        output_dir=str(tmp_path / name),
        options={"initial": {"type": "random", "amplitude": 0.01, "mean": 0.2, "seed": 4}},
    )


class TestConfig:
    def test_roundtrip(self, tmp_path):
        cfg = small_stochastic(tmp_path)
        cfg.event = EventSpec(C1=1.0, delta=0.2)
        back = ExperimentConfig.from_json(cfg.to_json())
        assert back.to_dict() == cfg.to_dict()

    def test_overrides(self):
        data = apply_overrides({"model": {"n": 16}}, ["model.n=32", "noise.sigma=1.5", "options.tag=abc", "epsilon_ladder=[0.2,0.1]"])
        assert data["model"]["n"] == 32
        assert data["noise"] == {"sigma": 1.5}
        assert data["options"]["tag"] == "abc"
        assert data["epsilon_ladder"] == [0.2, 0.1]
        with pytest.raises(ConfigError):
            apply_overrides({}, ["novalue"])

    def test_load_config(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"kind": "trace-check", "epsilon_ladder": [0.1]}))
        cfg = load_config(path, ["samples=4"])
        assert cfg.samples == 4 and cfg.kind == "trace-check"

    @pytest.mark.parametrize(
        "data",
        [
            {"kind": "bogus", "epsilon_ladder": [0.1]},
            {"kind": "trace-check", "epsilon_ladder": [0.1, 0.2]},
            {"kind": "trace-check", "epsilon_ladder": []},
            {"kind": "trace-check", "epsilon_ladder": [0.1], "samples": 0},
            {"kind": "trace-check", "epsilon_ladder": [0.1], "base_seed": -1},
            {"kind": "trace-check", "epsilon_ladder": [0.1], "unknown": 1},
            {"kind": "trace-check", "epsilon_ladder": [0.1], "model": {"bad": 1}},
            {"epsilon_ladder": [0.1]},
        ],
    )
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(data)

    def test_dt_snapping(self):
        m = ModelConfig(T=0.01)
        dt = m.dt_for(0.07)
        assert abs(0.01 / dt - round(0.01 / dt)) < 1e-9
        assert ModelConfig(dt=1e-3).dt_for(0.5) == 1e-3


class TestParallel:
    def test_worker_count_invariance(self, tmp_path):
        a = run_parallel(small_stochastic(tmp_path, "w1"), workers=1)
        b = run_parallel(small_stochastic(tmp_path, "w2"), workers=2)
        assert a.samples == b.samples
        for i in range(2):
            for s in range(3):
                name = f"series_e{i}_s{s}.csv"
                assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()

    def test_single_sample_and_record(self, tmp_path):
        cfg = small_stochastic(tmp_path)
        cfg.samples = 1
        rec = run_parallel(cfg, workers=1)
        assert len(rec.samples) == 2 and rec.failures == 0
        assert rec.checks[0]["name"] == "mass-conservation" and rec.checks[0]["holds"]
        back = RunRecord.read(tmp_path / "run" / "run_record.json")
        assert back.config == rec.config and back.format_version == 1

    def test_resolve_workers(self, monkeypatch):
        monkeypatch.setenv("SCH_WORKERS", "3")
        assert resolve_workers() == 3
        assert resolve_workers(2) == 2
        with pytest.raises(ValueError):
            resolve_workers(0)

    def test_blow_up_is_recorded(self, tmp_path):
        cfg = ExperimentConfig(
            kind="deterministic-ladder", epsilon_ladder=[0.05], model=ModelConfig(n=16, T=1.0, dt=0.01),
            output_dir=str(tmp_path / "b"), options={"initial": {"type": "random", "amplitude": 50.0}},
        )
        with pytest.warns(RuntimeWarning):
            rec = run_parallel(cfg, workers=1)
        assert rec.failures == 1 and rec.samples[0]["status"] == "blow-up"


class TestHelpers:
    def test_exponent_check_vacuous(self):
        assert blowup_exponent_check([0.1, 0.05, 0.02], [3.0, 2.0, 1.0]) == (None, True)
        slope, holds = blowup_exponent_check([0.1, 0.05, 0.02], [-1.0, -2.0, -5.0])
        assert slope < 0 and not holds

    def test_calibrate_C1(self):
        ev = EventSpec(C1=1.0, delta=0.25, sigma=2.0)
        scale = 0.1 ** (1.75 - 0.5)
        C1 = calibrate_C1(ev, 0.1, [scale * v for v in range(1, 11)], 0.9)
        assert C1 == pytest.approx(10.0)  # 'higher' quantile of 1..10 at 0.9

    def test_trace_dichotomy(self):
        res = trace_dichotomy()
        assert res["growth"] >= 0.5 and res["reference_change"] < 0.05


class TestCLI:
    def test_trace_check(self, tmp_path, capsys):
        assert cli.main(["trace-check", "--out", str(tmp_path / "t")]) == 0
        assert "[PASS]" in capsys.readouterr().out

    def test_rate_fit(self, tmp_path, capsys):
        rc = cli.main(["rate-fit", "--set", "points=[[0.1,0.01],[0.05,0.0025],[0.02,0.0004]]", "--set", "expected_slope=2", "--out", str(tmp_path)])
        assert rc == 0 and "slope=2" in capsys.readouterr().out
        rc = cli.main(["rate-fit", "--set", "points=[[0.1,0.01],[0.05,0.0025],[0.02,0.0004]]", "--set", "expected_slope=1", "--out", str(tmp_path)])
        assert rc == 1

    def test_rate_fit_csv(self, tmp_path):
        path = tmp_path / "pts.csv"
        path.write_text("eps,value\n0.1,0.1\n0.05,0.05\n0.02,0.02\n")
        assert cli.main(["rate-fit", str(path), "--set", "expected_slope=1", "--out", str(tmp_path)]) == 0

    def test_usage_errors(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["simulate", "--bogus"])
        assert exc.value.code == 2
        assert cli.main(["simulate", "--set", "kind=trace-check"]) == 2
        assert cli.main(["simulate", "--set", "epsilon_ladder=[0.1,0.2]"]) == 2
        assert cli.main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
        assert cli.main(["report", str(tmp_path / "empty")]) == 2

    def test_simulate_and_report(self, tmp_path, capsys):
        out = tmp_path / "sim"
        rc = cli.main([
            "simulate", "--set", "kind=deterministic-ladder", "--set", "model.n=16", "--set", "model.T=0.01",
            "--set", "epsilon_ladder=[0.3]", "--set", 'options.initial={"type":"constant","value":1.0}', "--out", str(out),
        ])
        assert rc == 0
        assert (out / "run_record.json").exists() and (out / "series_e0_s0.csv").exists()
        report = tmp_path / "report.json"
        assert cli.main(["report", str(tmp_path), "--out", str(report)]) == 0
        assert json.loads(report.read_text())[0]["name"] == "mass-conservation"

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "stochch", "nonsense"], capture_output=True)
        assert proc.returncode == 2
