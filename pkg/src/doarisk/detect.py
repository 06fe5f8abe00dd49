"""Iterative multi-source detection on SRP maps.

Detection repeatedly takes the feasible argmax of the current map, then
either stops (count below a peak threshold in unknown-count mode), or
suppresses the detected component from the cross-spectra and recomputes the
map. Feasibility excludes, for every earlier detection, all cells within d
degrees in elevation OR within d degrees in (circular) azimuth — i.e. a
cross-shaped keep-out around each detection.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, IngestionError, ShapeError
from .scene import SPEED_OF_SOUND, Doa, angular_distance
from .spectral import PairCrossSpectrum
from .srp import (
    DoaGrid,
    LikelihoodMap,
    MapRecord,
    SteeringTable,
    expected_tdoa,
    normalize_map,
    srp_map,
)


@dataclass
class DetectionTrace:
    """Ordered record of one detection run."""

    grid: DoaGrid
    mode: str  # "known" or "unknown"
    d_deg: float
    k_max: int
    peak_indices: list = field(default_factory=list)
    raw_peaks: list = field(default_factory=list)
    norm_peaks: list = field(default_factory=list)
    maps: list = field(default_factory=list)  # normalized per-iteration maps
    exhausted: bool = False

    @property
    def n_detections(self):
        return len(self.peak_indices)

    def doas(self):
        return [self.grid.doa(i) for i in self.peak_indices]


def _keepout_mask(grid, peak_index, d_deg):
    """Cells within d degrees of the peak in elevation OR azimuth."""
    i, j = divmod(int(peak_index), grid.n_az)
    el = grid.el_deg()
    az = grid.az_deg()
    el_diff = np.abs(el - el[i])
    az_diff = np.abs(az - az[j])
    az_diff = np.minimum(az_diff, 360.0 - az_diff)
    return ((el_diff < d_deg)[:, None] | (az_diff < d_deg)[None, :]).ravel()


def _feasible_argmax(values_flat, feasible):
    masked = np.where(feasible, values_flat, -np.inf)
    idx = int(np.argmax(masked))
    return idx


def suppress_peak(psi, peak_index, beta_raw, grid, array, c=SPEED_OF_SOUND):
    """Remove a detected component from the cross-spectra.

    Subtracts beta_raw * exp(+j w tau(p_hat)) from every pair at every frame
    and bin, which lowers the recomputed map at p_hat by exactly beta_raw.
    """
    doa = grid.doa(peak_index)
    omega = 2.0 * np.pi * psi.freqs_hz()
    pos = array.positions
    taus = np.array([expected_tdoa(pos[m], pos[mp], doa, c) for m, mp in psi.pairs])
    phases = np.exp(1j * np.outer(taus, omega))  # (P, F)
    values = psi.values - beta_raw * phases[:, None, :]
    return PairCrossSpectrum(values, psi.pairs, psi.window, psi.hop, psi.sample_rate)


def iterative_detect(
    source,
    grid=None,
    array=None,
    *,
    known_count=None,
    beta_th=None,
    k_max=None,
    d_deg=10.0,
    band_hz=(100.0, 4000.0),
    steering=None,
    c=SPEED_OF_SOUND,
):
    """Run iterative detection from cross-spectra or an imported map sequence.

    Exactly one of the stopping modes applies: ``known_count`` runs that many
    iterations; otherwise up to ``k_max`` iterations run, stopping early when
    ``beta_th`` is given and the normalized feasible peak falls below it.
    With neither ``known_count`` nor ``beta_th``, the full k_max-iteration
    trace is recorded so counts can be re-derived later for any threshold.
    """
    if known_count is not None:
        if known_count < 1:
            raise ContractError("known_count must be >= 1")
        # a supplied beta_th is irrelevant when the count is known: the loop
        # runs exactly known_count iterations with no threshold test
        beta_th = None
        limit = known_count
        mode = "known"
    else:
        if k_max is None or k_max < 1:
            raise ContractError("k_max must be given (>= 1) when the count is unknown")
        limit = k_max
        mode = "unknown"

    if isinstance(source, PairCrossSpectrum):
        if grid is None or array is None:
            raise ContractError("grid and array are required for cross-spectrum input")
        if steering is None:
            steering = SteeringTable(grid, array, source.freqs_hz(), band_hz, c)
        return _detect_srp(source, grid, array, steering, limit, mode, beta_th, d_deg, c)
    return _detect_maps(source, grid, limit, mode, beta_th, d_deg)


def _detect_srp(psi, grid, array, steering, limit, mode, beta_th, d_deg, c):
    trace = DetectionTrace(grid, mode, float(d_deg), limit)
    feasible = np.ones(grid.size, dtype=bool)
    current = psi
    for k in range(1, limit + 1):
        if not feasible.any():
            trace.exhausted = True
            break
        raw = srp_map(current, grid, steering=steering)
        norm = normalize_map(raw)
        idx = _feasible_argmax(raw.values.ravel(), feasible)
        beta_raw = float(raw.values.ravel()[idx])
        beta_norm = float(norm.values.ravel()[idx])
        if beta_th is not None and beta_norm < beta_th:
            break
        trace.peak_indices.append(idx)
        trace.raw_peaks.append(beta_raw)
        trace.norm_peaks.append(beta_norm)
        trace.maps.append(norm)
        if k < limit:
            current = suppress_peak(current, idx, beta_raw, grid, array, c)
            feasible &= ~_keepout_mask(grid, idx, d_deg)
    return trace


def _detect_maps(records, grid, limit, mode, beta_th, d_deg):
    maps = []
    for rec in records:
        lik = rec.map if isinstance(rec, MapRecord) else rec
        if not isinstance(lik, LikelihoodMap):
            raise ContractError("map input must be MapRecords or LikelihoodMaps")
        maps.append(lik)
    if grid is None:
        if not maps:
            raise IngestionError("empty map sequence")
        grid = maps[0].grid
    for lik in maps:
        if not lik.grid.matches(grid):
            raise IngestionError("imported maps disagree on the grid layout")

    trace = DetectionTrace(grid, mode, float(d_deg), limit)
    feasible = np.ones(grid.size, dtype=bool)
    for k in range(1, limit + 1):
        if not feasible.any():
            trace.exhausted = True
            break
        if k - 1 >= len(maps):
            raise IngestionError(
                f"map sequence provides {len(maps)} maps but iteration {k} is required"
            )
        raw = maps[k - 1]
        norm = raw if raw.normalized else normalize_map(raw)
        idx = _feasible_argmax(raw.values.ravel(), feasible)
        beta_raw = float(raw.values.ravel()[idx])
        beta_norm = float(norm.values.ravel()[idx])
        if beta_th is not None and beta_norm < beta_th:
            break
        trace.peak_indices.append(idx)
        trace.raw_peaks.append(beta_raw)
        trace.norm_peaks.append(beta_norm)
        trace.maps.append(norm)
        if k < limit:
            feasible &= ~_keepout_mask(grid, idx, d_deg)
    return trace


def estimate_count(trace_or_peaks, beta):
    """Largest k such that every normalized peak up to k is >= beta (0 if none)."""
    peaks = (
        trace_or_peaks.norm_peaks
        if isinstance(trace_or_peaks, DetectionTrace)
        else trace_or_peaks
    )
    count = 0
    for value in peaks:
        if value >= beta:
            count += 1
        else:
            break
    return count


def match_greedy(detected_doas, truth_doas):
    """Greedy assignment of detections (in detection order) to truths.

    Each detection takes the nearest unmatched truth by great-circle angle
    (ties -> lowest truth index). Returns a list of (detection, truth) index
    pairs; it ends when either side is exhausted.
    """
    pairs = []
    used = set()
    for j, det in enumerate(detected_doas):
        if len(used) == len(truth_doas):
            break
        best = None
        best_dist = np.inf
        for i, truth in enumerate(truth_doas):
            if i in used:
                continue
            dist = angular_distance(det, truth)
            if dist < best_dist:
                best = i
                best_dist = dist
        pairs.append((j, best))
        used.add(best)
    return pairs


# ---------------------------------------------------------------------------
# trace export


def trace_to_dict(trace, map_file=None):
    out = {
        "mode": trace.mode,
        "d_deg": trace.d_deg,
        "k_max": trace.k_max,
        "exhausted": trace.exhausted,
        "grid": {
            "n_el": trace.grid.n_el,
            "n_az": trace.grid.n_az,
            "el_start_deg": trace.grid.el_start_deg,
            "el_step_deg": trace.grid.el_step_deg,
            "az_start_deg": trace.grid.az_start_deg,
            "az_step_deg": trace.grid.az_step_deg,
        },
        "detections": [
            {
                "iteration": k + 1,
                "index": int(idx),
                "azimuth_deg": trace.grid.doa(idx).azimuth_deg,
                "elevation_deg": trace.grid.doa(idx).elevation_deg,
                "raw_peak": float(raw),
                "norm_peak": float(norm),
            }
            for k, (idx, raw, norm) in enumerate(
                zip(trace.peak_indices, trace.raw_peaks, trace.norm_peaks)
            )
        ],
    }
    if map_file is not None:
        out["map_file"] = str(map_file)
    return out


def save_trace(path, trace, map_file=None):
    with open(path, "w") as fh:
        json.dump(trace_to_dict(trace, map_file), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trace(path):
    """Rehydrate the peak schedule of a saved trace (maps are not restored)."""
    with open(path) as fh:
        data = json.load(fh)
    g = data["grid"]
    grid = DoaGrid(
        g["n_el"], g["n_az"], g["el_start_deg"], g["el_step_deg"],
        g["az_start_deg"], g["az_step_deg"],
    )
    trace = DetectionTrace(grid, data["mode"], data["d_deg"], data["k_max"])
    trace.exhausted = data["exhausted"]
    for det in data["detections"]:
        trace.peak_indices.append(int(det["index"]))
        trace.raw_peaks.append(float(det["raw_peak"]))
        trace.norm_peaks.append(float(det["norm_peak"]))
    return trace
