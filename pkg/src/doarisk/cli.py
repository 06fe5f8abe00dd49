"""Command-line pipeline: simulate -> map -> detect -> calibrate/evaluate -> report.

Every stage reads the same plan file and an optional --seed override, and
writes deterministic artifacts into a run directory, so re-running a stage
with the same seed reproduces its outputs byte for byte.

Exit codes: 0 on success, 2 when some samples failed but the batch went on,
1 on contract errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .detect import iterative_detect, save_trace, load_trace
from .errors import DoaRiskError
from .harness import (
    ExperimentPlan,
    SampleFailure,
    build_steering,
    draw_scene,
    run_trials,
    sample_schedule,
    write_report,
    build_stack,
)
from .losses import CalibrationSample
from .riskctl import save_outcome, select_operating_point, pareto_testing, pareto_testing_known, crc_select
from .scene import Doa, read_wav, render_scene, scene_spec_to_dict, write_wav
from .spectral import cross_spectrum_phat, stft
from .srp import MapRecord, export_map_sequence, import_map_sequence


def _load_plan(args):
    plan = ExperimentPlan.load(args.config)
    if args.seed is not None:
        plan.seed = args.seed
    return plan


def _sample_ids(plan):
    return [f"sample_{i:05d}" for i in range(len(sample_schedule(plan)))]


def cmd_simulate(args):
    plan = _load_plan(args)
    wav_dir = os.path.join(args.data, "wav")
    man_dir = os.path.join(args.data, "manifests")
    os.makedirs(wav_dir, exist_ok=True)
    os.makedirs(man_dir, exist_ok=True)
    failures = 0
    for i, sid in enumerate(_sample_ids(plan)):
        try:
            spec = draw_scene(plan, i)
            signal, manifest = render_scene(spec)
            gain = write_wav(os.path.join(wav_dir, sid + ".wav"), signal)
            manifest.update(
                sample_id=sid,
                gain=gain,
                scene=scene_spec_to_dict(spec),
            )
            with open(os.path.join(man_dir, sid + ".json"), "w") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)
                fh.write("\n")
        except DoaRiskError as exc:
            failures += 1
            print(f"simulate: {sid} failed: {exc}", file=sys.stderr)
    return 2 if failures else 0


def cmd_map(args):
    plan = _load_plan(args)
    man_dir = os.path.join(args.data, "manifests")
    map_dir = os.path.join(args.data, "maps")
    os.makedirs(map_dir, exist_ok=True)
    steering = build_steering(plan)
    grid = plan.grid()
    array = plan.array()
    trace_k = plan.k_max if plan.mode == "unknown_pt" else plan.known_k
    failures = 0
    for sid in _sample_ids(plan):
        man_path = os.path.join(man_dir, sid + ".json")
        if not os.path.exists(man_path):
            continue  # sample failed upstream
        try:
            with open(man_path) as fh:
                manifest = json.load(fh)
            signal = read_wav(os.path.join(args.data, "wav", sid + ".wav"), manifest["gain"])
            hop = plan.stft_hop or plan.stft_window // 2
            psi = cross_spectrum_phat(stft(signal, plan.stft_window, hop))
            trace = iterative_detect(
                psi, grid, array, k_max=trace_k, d_deg=plan.d_deg,
                band_hz=tuple(plan.band_hz), steering=steering,
            )
            if trace.n_detections < trace_k:
                raise SampleFailure(f"{sid}: detection exhausted the grid early")
            records = [
                MapRecord(trace.maps[k], k + 1, trace.peak_indices[k], trace.norm_peaks[k])
                for k in range(trace.n_detections)
            ]
            export_map_sequence(os.path.join(map_dir, sid + ".maps"), records)
        except DoaRiskError as exc:
            failures += 1
            print(f"map: {sid} failed: {exc}", file=sys.stderr)
    return 2 if failures else 0


def cmd_detect(args):
    plan = _load_plan(args)
    map_dir = os.path.join(args.data, "maps")
    trace_dir = os.path.join(args.data, "traces")
    os.makedirs(trace_dir, exist_ok=True)
    grid = plan.grid()
    trace_k = plan.k_max if plan.mode == "unknown_pt" else plan.known_k
    failures = 0
    for sid in _sample_ids(plan):
        map_path = os.path.join(map_dir, sid + ".maps")
        if not os.path.exists(map_path):
            continue
        try:
            records = import_map_sequence(map_path, expected_grid=grid)
            trace = iterative_detect(records, grid, k_max=trace_k, d_deg=plan.d_deg)
            save_trace(
                os.path.join(trace_dir, sid + ".json"), trace, map_file=sid + ".maps"
            )
        except DoaRiskError as exc:
            failures += 1
            print(f"detect: {sid} failed: {exc}", file=sys.stderr)
    return 2 if failures else 0


def load_samples(plan, data_dir):
    """Rebuild calibration samples from maps + traces + manifests."""
    grid = plan.grid()
    samples = []
    for sid in _sample_ids(plan):
        map_path = os.path.join(data_dir, "maps", sid + ".maps")
        trace_path = os.path.join(data_dir, "traces", sid + ".json")
        man_path = os.path.join(data_dir, "manifests", sid + ".json")
        if not all(os.path.exists(p) for p in (map_path, trace_path, man_path)):
            continue
        records = import_map_sequence(map_path, expected_grid=grid)
        trace = load_trace(trace_path)
        with open(man_path) as fh:
            manifest = json.load(fh)
        truths = [
            Doa.from_degrees(d["elevation_deg"], d["azimuth_deg"])
            for d in manifest["source_doas_deg"]
        ]
        samples.append(
            CalibrationSample(
                maps=np.stack([r.map.values for r in records]),
                peak_indices=np.array(trace.peak_indices),
                norm_peaks=np.array(trace.norm_peaks),
                truth_doas=truths,
                grid=grid,
                raw_peaks=np.array(trace.raw_peaks),
            )
        )
    return samples


def cmd_calibrate(args):
    plan = _load_plan(args)
    samples = load_samples(plan, args.data)
    stack = build_stack(plan, samples)
    rng = np.random.default_rng([plan.seed, 4000])
    out_path = args.out or os.path.join(args.data, "calibration.json")
    if plan.mode == "known_crc":
        lam_values = plan.lam_grid()
        thresholds = []
        for k in range(plan.known_k):
            lam, j = crc_select(stack.miss[k].T, lam_values, plan.alpha_mc)
            thresholds.append({"source_slot": k + 1, "lam": lam, "grid_index": j})
        payload = {"mode": plan.mode, "alpha_mc": plan.alpha_mc, "thresholds": thresholds}
        with open(out_path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return 0
    if plan.mode == "known_pt":
        outcome = pareto_testing_known(
            stack, plan.lam_grid(), plan.known_k, plan.alpha_mc, plan.delta, rng,
            opt_fraction=plan.opt_fraction,
        )
    else:
        outcome = pareto_testing(
            stack, plan.config_grid(), plan.alpha_mc, plan.alpha_md, plan.delta, rng,
            opt_fraction=plan.opt_fraction,
        )
    save_outcome(out_path, outcome)
    return 0


def cmd_evaluate(args):
    plan = _load_plan(args)
    samples = load_samples(plan, args.data)
    stack = build_stack(plan, samples)
    report = run_trials(plan, stack)
    out_path = args.out or os.path.join(args.data, "trials.json")
    report.save(out_path)
    return 0


def cmd_report(args):
    plan = _load_plan(args)
    from .harness import TrialReport

    trials_path = args.trials or os.path.join(args.data, "trials.json")
    report = TrialReport.load(trials_path)
    out_dir = args.out or os.path.join(args.data, "report")
    samples = None
    if os.path.isdir(os.path.join(args.data, "maps")):
        samples = load_samples(plan, args.data)
    write_report(report, out_dir, samples=samples, plan=plan)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="doarisk",
        description="simulate scenes, build SRP maps, detect sources, calibrate risk",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in [
        ("simulate", cmd_simulate),
        ("map", cmd_map),
        ("detect", cmd_detect),
        ("calibrate", cmd_calibrate),
        ("evaluate", cmd_evaluate),
        ("report", cmd_report),
    ]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="plan JSON file")
        p.add_argument("--data", required=True, help="run directory for artifacts")
        p.add_argument("--seed", type=int, default=None, help="override the plan seed")
        if name in ("calibrate", "evaluate"):
            p.add_argument("--out", default=None, help="output file path")
        if name == "report":
            p.add_argument("--out", default=None, help="report output directory")
            p.add_argument("--trials", default=None, help="trial report JSON to render")
        p.set_defaults(func=fn)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DoaRiskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
