"""Experiment orchestration: dataset generation, trial loops, reporting.

A plan describes the scene distribution, analysis front-end and calibration
settings. Datasets are generated once; every trial re-splits the same samples
into calibration/test halves, calibrates thresholds on one side and scores
losses on the other.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .detect import iterative_detect
from .errors import ContractError, DoaRiskError
from .losses import (
    CalibrationSample,
    ConfigGrid,
    ConfigVector,
    CurveStack,
    build_sample_curves,
    losses_known,
    losses_unknown,
)
from .regions import grow_region, region_to_dict
from .riskctl import (
    crc_select,
    pareto_testing,
    pareto_testing_known,
    select_operating_point,
)
from .scene import Doa, MicArray, SceneSpec, pseudo_spherical_array, render_scene
from .spectral import cross_spectrum_phat, stft
from .srp import DoaGrid, LikelihoodMap, SteeringTable

MODES = ("known_crc", "known_pt", "unknown_pt")


@dataclass
class RoomSpec:
    dims: tuple = (6.0, 6.0, 2.5)
    reflection_order: int = 1
    reflection_coeff: float = 0.7
    t60_label_ms: float | None = None


@dataclass
class ExperimentPlan:
    """Every knob of one experiment; serializable to/from JSON."""

    mode: str = "unknown_pt"
    seed: int = 0
    k_max: int = 3
    counts_per_k: dict = field(default_factory=lambda: {1: 100, 2: 100, 3: 100})
    rooms: list = field(default_factory=lambda: [RoomSpec()])
    multi_room: bool = False
    snr_db: float = 15.0
    sample_rate: int = 16000
    duration_s: float = 1.0
    source_range_m: float = 1.5
    min_separation_deg: float = 15.0
    elevation_range_deg: tuple = (60.0, 120.0)
    n_mics: int = 8
    array_radius_m: float = 0.25
    mic_positions: list | None = None
    array_center: tuple = (2.8, 3.1, 1.2)
    el_step_deg: float = 5.0
    az_step_deg: float = 5.0
    stft_window: int = 512
    stft_hop: int | None = None
    band_hz: tuple = (100.0, 4000.0)
    d_deg: float = 10.0
    alpha_mc: float = 0.1
    alpha_md: float = 0.1
    delta: float = 0.1
    n_trials: int = 50
    n_cal: int = 240
    n_test: int = 60
    opt_fraction: float = 0.5
    crc_lam_points: int = 100
    pt_lam_points: int = 15
    pt_beta_points: int | None = None
    operating_point: str = "min_fa"
    op_weights: tuple = (0.5, 0.5)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.counts_per_k = {int(k): int(v) for k, v in self.counts_per_k.items()}
        if any(k < 1 or k > self.k_max for k in self.counts_per_k):
            raise ContractError("counts_per_k keys must lie in 1..k_max")
        if self.mode.startswith("known") and len(self.counts_per_k) != 1:
            raise ContractError("known-count modes need a single source count")
        if self.n_samples < self.n_cal + self.n_test:
            raise ContractError(
                f"{self.n_samples} samples cannot cover n_cal={self.n_cal} + n_test={self.n_test}"
            )

    @property
    def n_samples(self):
        return sum(self.counts_per_k.values())

    @property
    def known_k(self):
        return next(iter(self.counts_per_k))

    def grid(self):
        return DoaGrid.default(self.el_step_deg, self.az_step_deg)

    def array(self):
        if self.mic_positions is not None:
            return MicArray(np.asarray(self.mic_positions, dtype=float))
        return pseudo_spherical_array(self.n_mics, self.array_radius_m)

    def lam_grid(self):
        if self.mode == "known_crc":
            return np.linspace(0.0, 1.0, self.crc_lam_points)
        return np.linspace(0.0, 1.0, self.pt_lam_points)

    def config_grid(self):
        n_beta = self.pt_beta_points or self.pt_lam_points
        return ConfigGrid(
            np.linspace(0.0, 1.0, self.pt_lam_points),
            np.linspace(0.0, 1.0, n_beta),
            self.k_max,
        )

    def t60_label(self):
        labels = sorted({r.t60_label_ms for r in self.rooms if r.t60_label_ms is not None})
        if not labels:
            return "none"
        return "+".join(f"{int(v)}" for v in labels)

    def to_dict(self):
        data = asdict(self)
        data["counts_per_k"] = {str(k): v for k, v in self.counts_per_k.items()}
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "rooms" in data:
            data["rooms"] = [
                RoomSpec(
                    dims=tuple(r.get("dims", (6.0, 6.0, 2.5))),
                    reflection_order=r.get("reflection_order", 1),
                    reflection_coeff=r.get("reflection_coeff", 0.7),
                    t60_label_ms=r.get("t60_label_ms"),
                )
                for r in data["rooms"]
            ]
        for key in ("elevation_range_deg", "band_hz", "array_center", "op_weights"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class SampleFailure(DoaRiskError):
    """A single sample could not be generated or processed."""


def sample_schedule(plan):
    """Deterministic (source count, room index) schedule for every sample."""
    ks = []
    for k in sorted(plan.counts_per_k):
        ks.extend([k] * plan.counts_per_k[k])
    rooms = []
    for i in range(len(ks)):
        if plan.multi_room and len(plan.rooms) > 1:
            rng = np.random.default_rng([plan.seed, 11, i])
            rooms.append(int(rng.integers(len(plan.rooms))))
        else:
            rooms.append(i % len(plan.rooms) if len(plan.rooms) > 1 else 0)
    return list(zip(ks, rooms))


def draw_scene(plan, sample_index):
    """Build the SceneSpec for one sample (rejection-sampled DOAs)."""
    k, room_idx = sample_schedule(plan)[sample_index]
    room = plan.rooms[room_idx]
    array = plan.array()
    rng = np.random.default_rng([plan.seed, 22, sample_index])
    room_dims = np.asarray(room.dims, dtype=float)
    center = np.asarray(plan.array_center, dtype=float)
    lo, hi = plan.elevation_range_deg
    doas = []
    attempts = 0
    while len(doas) < k:
        attempts += 1
        if attempts > 500:
            raise SampleFailure(
                f"sample {sample_index}: could not place {k} sources after {attempts} draws"
            )
        cand = Doa.from_degrees(rng.uniform(lo, hi), rng.uniform(-180.0, 180.0))
        pos = center + plan.source_range_m * cand.unit_vector()
        if np.any(pos <= 0.05) or np.any(pos >= room_dims - 0.05):
            continue
        sep_ok = all(
            math.degrees(_angle(cand, d)) >= plan.min_separation_deg for d in doas
        )
        if sep_ok:
            doas.append(cand)
    seed = int(np.random.default_rng([plan.seed, 33, sample_index]).integers(0, 2**31 - 1))
    return SceneSpec(
        room_dims=tuple(room_dims),
        array=array,
        array_center=tuple(center),
        source_doas=doas,
        source_range=plan.source_range_m,
        reflection_order=room.reflection_order,
        reflection_coeff=room.reflection_coeff,
        snr_db=plan.snr_db,
        sample_rate=plan.sample_rate,
        duration_s=plan.duration_s,
        seed=seed,
        min_separation_deg=plan.min_separation_deg,
        t60_label_ms=room.t60_label_ms,
    )


def _angle(a, b):
    from .scene import angular_distance

    return angular_distance(a, b)


def analyze_signal(plan, signal, steering=None):
    """Front-end for one recording: STFT, PHAT cross-spectra, full detection."""
    grid = plan.grid()
    array = plan.array()
    hop = plan.stft_hop or plan.stft_window // 2
    x = stft(signal, plan.stft_window, hop)
    psi = cross_spectrum_phat(x)
    trace = iterative_detect(
        psi,
        grid,
        array,
        k_max=plan.k_max if plan.mode == "unknown_pt" else plan.known_k,
        d_deg=plan.d_deg,
        band_hz=tuple(plan.band_hz),
        steering=steering,
    )
    return trace


def build_steering(plan):
    grid = plan.grid()
    array = plan.array()
    freqs = np.fft.rfftfreq(plan.stft_window, 1.0 / plan.sample_rate)
    return SteeringTable(grid, array, freqs, tuple(plan.band_hz))


def generate_dataset(plan, progress=None):
    """Simulate and analyze every sample; returns (samples, failure log)."""
    steering = build_steering(plan)
    schedule = sample_schedule(plan)
    trace_k = plan.k_max if plan.mode == "unknown_pt" else plan.known_k
    samples = []
    failures = []
    for i in range(len(schedule)):
        try:
            spec = draw_scene(plan, i)
            signal, _ = render_scene(spec)
            trace = analyze_signal(plan, signal, steering)
            if trace.n_detections < trace_k:
                raise SampleFailure(f"sample {i}: detection exhausted the grid early")
            samples.append(CalibrationSample.from_trace(trace, spec.source_doas))
        except DoaRiskError as exc:
            failures.append((i, str(exc)))
        if progress is not None and (i + 1) % 25 == 0:
            progress(i + 1, len(schedule))
    return samples, failures


def build_stack(plan, samples):
    curves = [build_sample_curves(s, plan.lam_grid()) for s in samples]
    return CurveStack(curves)


# ---------------------------------------------------------------------------
# trial protocol


@dataclass
class TrialRow:
    trial: int
    mc: float
    md: float
    fa: float
    pa: float
    no_valid: bool
    n_rejected: int
    lams: tuple
    beta: float | None


@dataclass
class TrialReport:
    mode: str
    t60_label: str
    alpha_mc: float
    alpha_md: float
    delta: float
    rows: list

    def summary(self):
        if not self.rows:
            raise ContractError("cannot summarize an empty trial list")
        mc = np.array([r.mc for r in self.rows])
        md = np.array([r.md for r in self.rows])
        fa = np.array([r.fa for r in self.rows])
        pa = np.array([r.pa for r in self.rows])
        return {
            "mode": self.mode,
            "t60_label": self.t60_label,
            "alpha_mc": self.alpha_mc,
            "alpha_md": self.alpha_md,
            "delta": self.delta,
            "P_MC": float(np.mean(mc > self.alpha_mc)),
            "P_MD": float(np.mean(md > self.alpha_md)),
            "mean_MC": float(mc.mean()),
            "mean_MD": float(md.mean()),
            "mean_FA": float(fa.mean()),
            "mean_PA_pct": float(100.0 * pa.mean()),
            "n_trials": len(self.rows),
            "n_no_valid": int(sum(r.no_valid for r in self.rows)),
        }

    def to_dict(self):
        return {
            "mode": self.mode,
            "t60_label": self.t60_label,
            "alpha_mc": self.alpha_mc,
            "alpha_md": self.alpha_md,
            "delta": self.delta,
            "rows": [
                {
                    "trial": r.trial,
                    "mc": r.mc,
                    "md": r.md,
                    "fa": r.fa,
                    "pa": r.pa,
                    "no_valid": r.no_valid,
                    "n_rejected": r.n_rejected,
                    "lams": list(r.lams),
                    "beta": r.beta,
                }
                for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, data):
        rows = [
            TrialRow(
                r["trial"], r["mc"], r["md"], r["fa"], r["pa"], r["no_valid"],
                r["n_rejected"], tuple(r["lams"]), r["beta"],
            )
            for r in data["rows"]
        ]
        return cls(
            data["mode"], data["t60_label"], data["alpha_mc"], data["alpha_md"],
            data["delta"], rows,
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _lam_indices(lam_values, lams):
    idx = np.searchsorted(lam_values, np.asarray(lams))
    if not np.allclose(lam_values[idx], lams):
        raise ContractError("configuration lams are not on the calibration grid")
    return idx


def _trial_split(plan, stack, trial):
    rng = np.random.default_rng([plan.seed, 3000 + trial])
    perm = rng.permutation(stack.n_samples)
    test = stack.subset(perm[: plan.n_test])
    cal = stack.subset(perm[plan.n_test : plan.n_test + plan.n_cal])
    return cal, test, rng


def run_single_trial(plan, stack, trial):
    cal, test, rng = _trial_split(plan, stack, trial)
    lam_values = plan.lam_grid()
    if plan.mode == "known_crc":
        k = plan.known_k
        lam_idx = np.zeros(k, dtype=np.int64)
        lams = []
        for kk in range(k):
            lam, j = crc_select(cal.miss[kk].T, lam_values, plan.alpha_mc)
            lam_idx[kk] = 0 if j is None else j
            lams.append(0.0 if j is None else lam)
        ls = losses_known(test, lam_idx)
        mc = float(np.mean(ls["mc"])) / k  # per-source rate
        pa = float(np.mean(ls["pa"]))
        return TrialRow(trial, mc, 0.0, 0.0, pa, False, 0, tuple(lams), None)
    if plan.mode == "known_pt":
        k = plan.known_k
        outcome = pareto_testing_known(
            cal, lam_values, k, plan.alpha_mc, plan.delta, rng,
            opt_fraction=plan.opt_fraction,
        )
        if outcome.no_valid:
            config = outcome.fallback
        else:
            config = select_operating_point(outcome, plan.operating_point, plan.op_weights)
        lam_idx = _lam_indices(lam_values, config.lams)
        ls = losses_known(test, lam_idx)
        mc = float(np.mean(ls["mc"]))
        pa = float(np.mean(ls["pa"]))
        return TrialRow(
            trial, mc, 0.0, 0.0, pa, outcome.no_valid, len(outcome.rejected),
            config.lams, None,
        )
    grid = plan.config_grid()
    outcome = pareto_testing(
        cal, grid, plan.alpha_mc, plan.alpha_md, plan.delta, rng,
        opt_fraction=plan.opt_fraction,
    )
    if outcome.no_valid:
        config = outcome.fallback
    else:
        config = select_operating_point(outcome, plan.operating_point, plan.op_weights)
    lam_idx = _lam_indices(grid.lam_values, config.lams)
    beta_idx = int(np.searchsorted(grid.beta_values, config.beta))
    ls = losses_unknown(test, lam_idx, beta_idx, grid.beta_values)
    return TrialRow(
        trial,
        float(np.mean(ls["mc"])),
        float(np.mean(ls["md"])),
        float(np.mean(ls["fa"])),
        float(np.mean(ls["pa"])),
        outcome.no_valid,
        len(outcome.rejected),
        config.lams,
        config.beta,
    )


def run_trials(plan, stack, progress=None):
    rows = []
    for t in range(plan.n_trials):
        rows.append(run_single_trial(plan, stack, t))
        if progress is not None and (t + 1) % 10 == 0:
            progress(t + 1, plan.n_trials)
    return TrialReport(
        plan.mode, plan.t60_label(), plan.alpha_mc, plan.alpha_md, plan.delta, rows
    )


# ---------------------------------------------------------------------------
# reporting


SUMMARY_COLUMNS = [
    "mode", "t60_label", "alpha_mc", "alpha_md", "delta",
    "P_MC", "P_MD", "mean_MC", "mean_MD", "mean_FA", "mean_PA_pct",
]


def write_report(report, out_dir, samples=None, plan=None, max_region_dumps=8):
    """Emit trials.csv + summary.csv (and region dumps when samples given)."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    rows = sorted(report.rows, key=lambda r: r.trial)
    if not rows:
        raise ContractError("cannot report an empty trial list")
    k_slots = max(len(r.lams) for r in rows)
    with open(os.path.join(out_dir, "trials.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["trial", "mc", "md", "fa", "pa", "no_valid", "n_rejected"]
        header += [f"lam_{i + 1}" for i in range(k_slots)] + ["beta"]
        writer.writerow(header)
        for r in rows:
            lams = list(r.lams) + [""] * (k_slots - len(r.lams))
            writer.writerow(
                [r.trial, repr(r.mc), repr(r.md), repr(r.fa), repr(r.pa),
                 int(r.no_valid), r.n_rejected]
                + [repr(v) if v != "" else "" for v in lams]
                + ["" if r.beta is None else repr(r.beta)]
            )
    summary = report.summary()
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerow([
            summary["mode"], summary["t60_label"], repr(summary["alpha_mc"]),
            repr(summary["alpha_md"]), repr(summary["delta"]), repr(summary["P_MC"]),
            repr(summary["P_MD"]), repr(summary["mean_MC"]), repr(summary["mean_MD"]),
            repr(summary["mean_FA"]), repr(summary["mean_PA_pct"]),
        ])
    if samples is not None and plan is not None:
        _dump_regions(rows[0], out_dir, samples, plan, max_region_dumps)


def _dump_regions(row, out_dir, samples, plan, max_dumps):
    import os

    region_dir = os.path.join(out_dir, "regions")
    os.makedirs(region_dir, exist_ok=True)
    grid = plan.grid()
    for i, sample in enumerate(samples[:max_dumps]):
        dumps = []
        for k in range(min(sample.k_recorded, len(row.lams))):
            lik = LikelihoodMap(sample.maps[k], grid, normalized=True)
            region = grow_region(lik, sample.peak_indices[k], row.lams[k])
            entry = region_to_dict(region)
            entry["source_slot"] = k + 1
            dumps.append(entry)
        with open(os.path.join(region_dir, f"sample_{i:05d}.json"), "w") as fh:
            json.dump({"trial": row.trial, "regions": dumps}, fh, indent=2, sort_keys=True)
            fh.write("\n")
