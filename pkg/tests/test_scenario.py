"""Config loading, run orchestration, emission, and CLI surface tests."""

import hashlib
import json
import subprocess
import sys

import pytest
import yaml

from conftest import make_config, raw_scenario
from uavqos.engine import run
from uavqos.output import emit, summary_json, trace_csv_lines
from uavqos.scenario import (
    BUILTIN_SCENARIOS,
    ConfigError,
    builtin_config_path,
    load_config,
    parse_config,
)


def digest(lines) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


class TestLoadConfig:
    def test_all_bundled_configs_load(self):
        for name in BUILTIN_SCENARIOS:
            cfg = load_config(builtin_config_path(name))
            assert cfg.name == name

    def test_baseline_scenario_shape(self):
        cfg = load_config(builtin_config_path("no_qos_no_bg"))
        assert cfg.qos == "never"
        assert cfg.background is None
        assert cfg.camera.rate_bps + cfg.control.rate_bps == \
            pytest.approx(47e6)

    def test_dynamic_scenario_carries_experiment_parameters(self):
        cfg = load_config(builtin_config_path("dynamic_qos_bg"))
        pf = cfg.pfsm
        assert (pf.cam_sigmoid.steepness, pf.cc_sigmoid.steepness,
                pf.risk_sigmoid.steepness) == (3.0, 5.0, 5.0)
        assert (pf.cam_sigmoid.midpoint, pf.cc_sigmoid.midpoint,
                pf.risk_sigmoid.midpoint) == (61.0, 27.0, 3.0)
        assert (pf.cam_weight, pf.cc_weight) == (0.35, 0.65)
        assert (pf.cam_window, pf.cc_window) == (10, 50)

    def test_weights_must_sum_to_one(self):
        raw = raw_scenario("dynamic_qos_bg")
        raw["pfsm"]["cam_weight"] = 0.5
        raw["pfsm"]["cc_weight"] = 0.6
        with pytest.raises(ConfigError, match="cam_weight"):
            parse_config(raw)

    def test_unknown_key_rejected_with_path(self):
        raw = raw_scenario("no_qos_no_bg")
        raw["uplink"]["bandwidth"] = 1.0
        with pytest.raises(ConfigError, match="uplink.*bandwidth"):
            parse_config(raw)

    def test_missing_required_key(self):
        raw = raw_scenario("no_qos_no_bg")
        del raw["duration_ms"]
        with pytest.raises(ConfigError, match="duration_ms"):
            parse_config(raw)

    def test_environment_segments_must_be_ordered(self):
        raw = raw_scenario("dynamic_qos_bg")
        raw["environment"] = [{"spaciousness_m": 4.0, "until_ms": 9000.0},
                              {"spaciousness_m": 6.0, "until_ms": 2000.0}]
        with pytest.raises(ConfigError, match="ordered"):
            parse_config(raw)

    def test_background_requires_window(self):
        raw = raw_scenario("no_qos_bg")
        del raw["background"]["active_window_ms"]
        with pytest.raises(ConfigError, match="active_window_ms"):
            parse_config(raw)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="no such config"):
            load_config("/nonexistent/path.yaml")


@pytest.fixture(scope="module")
def short_run():
    cfg = make_config("no_qos_no_bg", duration_ms=60_000.0)
    return cfg, *run(cfg)


class TestRunAndEmit:
    def test_sixty_second_run_yields_600_rows(self, short_run):
        _, traces, _ = short_run
        lines = list(trace_csv_lines(traces))
        assert len(lines) == 601           # header + one row per interval
        assert lines[0].startswith("time,state,signals,ul_buffer,rtt,")

    def test_rerun_is_byte_identical(self, short_run):
        cfg, traces, summary = short_run
        traces2, summary2 = run(make_config("no_qos_no_bg",
                                            duration_ms=60_000.0))
        assert digest(trace_csv_lines(traces)) == \
            digest(trace_csv_lines(traces2))
        assert summary_json(summary) == summary_json(summary2)

    def test_emit_writes_both_formats(self, short_run, tmp_path):
        _, traces, summary = short_run
        paths = emit(traces, summary, tmp_path / "out")
        names = {p.name for p in paths}
        assert names == {"trace.csv", "summary.json"}
        data = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert data["name"] == "no_qos_no_bg"
        assert data["stability"] == "stable"

    def test_phase_means_equal_brute_force_recomputation(self):
        cfg = make_config("dynamic_qos_bg", duration_ms=8_000.0)
        raw = raw_scenario("dynamic_qos_bg")
        raw["duration_ms"] = 8_000.0
        raw["background"]["active_window_ms"] = [3000.0, 6000.0]
        cfg = parse_config(raw)
        traces, summary = run(cfg)
        for ph in summary.phases:
            rows = [r for r in traces if ph.start_ms <= r.time <= ph.end_ms
                    and r.state == ph.state]
            assert ph.mean_rtt_ms == pytest.approx(
                sum(r.rtt for r in rows) / len(rows))
            assert ph.mean_uav_goodput_mbps == pytest.approx(
                sum(r.uav_goodput for r in rows) / len(rows))
            assert ph.mean_bg_goodput_mbps == pytest.approx(
                sum(r.bg_goodput for r in rows) / len(rows))

    def test_overload_summary_verdict_unstable(self):
        raw = raw_scenario("no_qos_bg")
        raw["duration_ms"] = 60_000.0
        raw["background"]["active_window_ms"] = [5_000.0, 60_000.0]
        traces, summary = run(parse_config(raw))
        assert summary.stability == "unstable"
        assert summary.instability_time_ms is not None
        assert summary.instability_time_ms < 60_000.0

    def test_golden_digest_frozen(self):
        # short baseline run pinned: any behavioral drift shows up here
        cfg = make_config("no_qos_no_bg", duration_ms=2_000.0)
        traces, _ = run(cfg)
        assert digest(trace_csv_lines(traces)) == GOLDEN_DIGEST_2S_BASELINE

    def test_stochastic_mode_runs_and_replays(self):
        raw = raw_scenario("dynamic_qos_bg")
        raw["duration_ms"] = 5_000.0
        raw["background"]["active_window_ms"] = [2_000.0, 4_000.0]
        raw["pfsm"]["mode"] = "stochastic"
        a, _ = run(parse_config(raw))
        b, _ = run(parse_config(raw))
        assert digest(trace_csv_lines(a)) == digest(trace_csv_lines(b))
        raw["seed"] = 99
        c, _ = run(parse_config(raw))
        assert digest(trace_csv_lines(a)) != digest(trace_csv_lines(c))


GOLDEN_DIGEST_2S_BASELINE = \
    "65eec611199b3acf6f9b35e0bbc5cb6f8ea7263152a10d44137bd2ec06dd0a62"


class TestCli:
    def cli(self, *args):
        return subprocess.run([sys.executable, "-m", "uavqos.cli", *args],
                              capture_output=True, text=True)

    def test_validate_bundled_ok(self):
        r = self.cli("validate", "--config", "no_qos_no_bg")
        assert r.returncode == 0 and "ok" in r.stdout

    def test_validate_rejects_bad_config(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        raw = raw_scenario("no_qos_no_bg")
        raw["qos"] = "sometimes"
        bad.write_text(yaml.safe_dump(raw))
        r = self.cli("validate", "--config", str(bad))
        assert r.returncode == 1
        assert "qos" in r.stderr

    def test_run_writes_outputs(self, tmp_path):
        short = tmp_path / "short.yaml"
        raw = raw_scenario("no_qos_no_bg")
        raw["duration_ms"] = 1_000.0
        short.write_text(yaml.safe_dump(raw))
        out = tmp_path / "out"
        r = self.cli("run", "--config", str(short), "--out", str(out))
        assert r.returncode == 0, r.stderr
        assert (out / "trace.csv").exists()
        assert (out / "summary.json").exists()
        header, first = (out / "trace.csv").read_text().splitlines()[:2]
        assert header.split(",") == list(
            __import__("uavqos.engine", fromlist=["TraceRecord"])
            .TraceRecord.FIELDS)

    def test_seed_override_changes_summary_seed(self, tmp_path):
        short = tmp_path / "short.yaml"
        raw = raw_scenario("no_qos_no_bg")
        raw["duration_ms"] = 1_000.0
        short.write_text(yaml.safe_dump(raw))
        out = tmp_path / "out"
        r = self.cli("run", "--config", str(short), "--seed", "42",
                     "--out", str(out))
        assert r.returncode == 0
        assert json.loads((out / "summary.json").read_text())["seed"] == 42

    def test_sweep_runs_each_value(self, tmp_path):
        short = tmp_path / "short.yaml"
        raw = raw_scenario("priority_qos_bg")
        raw["duration_ms"] = 2_000.0
        raw["background"]["active_window_ms"] = [0.0, 2_000.0]
        short.write_text(yaml.safe_dump(raw))
        out = tmp_path / "sweep"
        r = self.cli("sweep", "--config", str(short), "--param",
                     "pfsm.qos_slope", "--values", "2.0,8.0",
                     "--out", str(out), "--jobs", "2")
        assert r.returncode == 0, r.stderr
        assert (out / "2.0" / "trace.csv").exists()
        assert (out / "8.0" / "trace.csv").exists()
        assert r.stdout.count("scenario priority_qos_bg") == 2
