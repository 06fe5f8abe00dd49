"""The staged command-line pipeline on miniature plans."""
from __future__ import annotations

import json

import numpy as np
import pytest

from doarisk.cli import load_samples, main
from doarisk.harness import ExperimentPlan


def _tiny_known_plan(**overrides):
    kwargs = dict(
        mode="known_crc", seed=9, k_max=1, counts_per_k={1: 2},
        n_cal=1, n_test=1, n_trials=2, duration_s=0.25,
        el_step_deg=15.0, az_step_deg=15.0, crc_lam_points=5,
    )
    kwargs.update(overrides)
    return ExperimentPlan(**kwargs)


def _write_plan(tmp_path, plan):
    path = tmp_path / "plan.json"
    plan.save(path)
    return str(path)


def _run(stage, config, data, *extra):
    return main([stage, "--config", config, "--data", str(data)] + list(extra))


def test_full_known_pipeline(tmp_path):
    plan = _tiny_known_plan()
    config = _write_plan(tmp_path, plan)
    data = tmp_path / "run"

    assert _run("simulate", config, data) == 0
    for sid in ("sample_00000", "sample_00001"):
        assert (data / "wav" / f"{sid}.wav").exists()
        assert (data / "manifests" / f"{sid}.json").exists()
    manifest = json.loads((data / "manifests" / "sample_00000.json").read_text())
    assert manifest["n_sources"] == 1
    assert manifest["sample_id"] == "sample_00000"
    assert len(manifest["source_doas_deg"]) == 1

    assert _run("map", config, data) == 0
    assert _run("detect", config, data) == 0
    for sid in ("sample_00000", "sample_00001"):
        assert (data / "maps" / f"{sid}.maps").exists()
        assert (data / "traces" / f"{sid}.json").exists()

    assert _run("calibrate", config, data) == 0
    calib = json.loads((data / "calibration.json").read_text())
    assert calib["mode"] == "known_crc"
    assert len(calib["thresholds"]) == 1
    assert calib["thresholds"][0]["source_slot"] == 1
    assert 0.0 <= calib["thresholds"][0]["lam"] <= 1.0

    assert _run("evaluate", config, data) == 0
    trials = json.loads((data / "trials.json").read_text())
    assert len(trials["rows"]) == 2

    assert _run("report", config, data) == 0
    assert (data / "report" / "trials.csv").exists()
    assert (data / "report" / "summary.csv").exists()
    regions = sorted(p.name for p in (data / "report" / "regions").iterdir())
    assert regions == ["sample_00000.json", "sample_00001.json"]
    dump = json.loads((data / "report" / "regions" / "sample_00000.json").read_text())
    assert dump["regions"][0]["source_slot"] == 1

    # reconstruction: stored maps + traces recover a usable calibration sample
    samples = load_samples(plan, str(data))
    assert len(samples) == 2
    for sample in samples:
        assert sample.k_recorded == 1
        assert sample.k_true == 1
        assert int(np.argmax(sample.maps[0])) == int(sample.peak_indices[0])
    trace = json.loads((data / "traces" / "sample_00000.json").read_text())
    assert trace["detections"][0]["index"] == int(samples[0].peak_indices[0])
    assert trace["detections"][0]["norm_peak"] == samples[0].norm_peaks[0]


def test_stage_rerun_is_byte_identical(tmp_path):
    plan = _tiny_known_plan()
    config = _write_plan(tmp_path, plan)
    data = tmp_path / "run"
    _run("simulate", config, data)
    _run("map", config, data)
    wav_before = (data / "wav" / "sample_00000.wav").read_bytes()
    maps_before = (data / "maps" / "sample_00000.maps").read_bytes()
    _run("simulate", config, data)
    _run("map", config, data)
    assert (data / "wav" / "sample_00000.wav").read_bytes() == wav_before
    assert (data / "maps" / "sample_00000.maps").read_bytes() == maps_before


def test_seed_override_changes_scenes(tmp_path):
    plan = _tiny_known_plan()
    config = _write_plan(tmp_path, plan)
    base = tmp_path / "base"
    other = tmp_path / "other"
    _run("simulate", config, base)
    _run("simulate", config, other, "--seed", "123")
    assert (base / "wav" / "sample_00000.wav").read_bytes() != (
        other / "wav" / "sample_00000.wav"
    ).read_bytes()


def test_unknown_mode_pipeline(tmp_path):
    plan = ExperimentPlan(
        mode="unknown_pt", seed=11, k_max=2, counts_per_k={1: 3, 2: 3},
        n_cal=4, n_test=2, n_trials=1, duration_s=0.25,
        el_step_deg=15.0, az_step_deg=15.0,
        pt_lam_points=3, pt_beta_points=3,
    )
    config = _write_plan(tmp_path, plan)
    data = tmp_path / "run"
    for stage in ("simulate", "map", "detect", "calibrate", "evaluate", "report"):
        assert _run(stage, config, data) == 0
    outcome = json.loads((data / "calibration.json").read_text())
    assert "no_valid" in outcome and "configs" in outcome
    trials = json.loads((data / "trials.json").read_text())
    row = trials["rows"][0]
    assert len(row["lams"]) == 2
    assert row["beta"] is not None


def test_sample_failures_exit_code_and_skips(tmp_path, capsys):
    # a source range larger than the room makes every placement fail
    plan = _tiny_known_plan(source_range_m=50.0)
    config = _write_plan(tmp_path, plan)
    data = tmp_path / "run"
    assert _run("simulate", config, data) == 2
    err = capsys.readouterr().err
    assert "failed" in err
    assert not (data / "manifests").exists() or not list((data / "manifests").iterdir())
    # downstream stages skip missing samples rather than erroring
    assert _run("map", config, data) == 0
    assert not list((data / "maps").iterdir())


def test_contract_error_exit_code(tmp_path, capsys):
    plan = _tiny_known_plan()
    config = _write_plan(tmp_path, plan)
    data = tmp_path / "empty"
    data.mkdir()
    # calibrating with no processed samples is a contract error -> exit 1
    assert _run("calibrate", config, data) == 1
    assert "error:" in capsys.readouterr().err
