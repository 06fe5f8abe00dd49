"""Per-sample loss bookkeeping for threshold calibration.

The expensive geometry (region growth per candidate lam, detection/truth
matching) is collapsed once per sample into small curves; every configuration
is then evaluated from those curves alone. Results are identical to
evaluating each configuration directly from the definitions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .detect import match_greedy
from .errors import ContractError, ShapeError
from .regions import region_curves, snap_to_grid
from .srp import LikelihoodMap


@dataclass(frozen=True)
class ConfigVector:
    """One operating point: a region threshold per source slot + peak threshold."""

    lams: tuple
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "lams", tuple(float(v) for v in self.lams))
        if self.beta is not None:
            object.__setattr__(self, "beta", float(self.beta))


@dataclass
class CalibrationSample:
    """Everything recorded for one scene: per-iteration maps, peaks, truths."""

    maps: np.ndarray  # (k_rec, n_el, n_az) normalized map values
    peak_indices: np.ndarray  # (k_rec,)
    norm_peaks: np.ndarray  # (k_rec,)
    truth_doas: list
    grid: object
    raw_peaks: np.ndarray | None = None

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=float)
        self.peak_indices = np.asarray(self.peak_indices, dtype=np.int64)
        self.norm_peaks = np.asarray(self.norm_peaks, dtype=float)
        if self.maps.ndim != 3:
            raise ShapeError("sample maps must be (iterations, n_el, n_az)")
        if not (len(self.maps) == len(self.peak_indices) == len(self.norm_peaks)):
            raise ShapeError("maps and peak lists disagree in length")

    @property
    def k_recorded(self):
        return self.maps.shape[0]

    @property
    def k_true(self):
        return len(self.truth_doas)

    @classmethod
    def from_trace(cls, trace, truth_doas):
        return cls(
            maps=np.stack([m.values for m in trace.maps]),
            peak_indices=np.array(trace.peak_indices, dtype=np.int64),
            norm_peaks=np.array(trace.norm_peaks, dtype=float),
            truth_doas=list(truth_doas),
            grid=trace.grid,
            raw_peaks=np.array(trace.raw_peaks, dtype=float),
        )


@dataclass
class SampleCurves:
    """Loss ingredients for one sample over a lam grid.

    miss[k, j] is 1 when the truth matched to detection k is not covered by
    the region grown from detection k at lam_grid[j] (only slots k < k_true
    are ever read); area[k, j] is that region's area fraction.
    """

    lam_grid: np.ndarray
    norm_peaks: np.ndarray  # (k_max,)
    k_true: int
    miss: np.ndarray  # (k_max, n_lam) uint8
    area: np.ndarray  # (k_max, n_lam) float64


def build_sample_curves(sample, lam_grid):
    """Match detections to truths and sweep region curves for every slot."""
    lam_grid = np.asarray(lam_grid, dtype=float)
    grid = sample.grid
    k_rec = sample.k_recorded
    n_lam = lam_grid.size
    det_doas = [grid.doa(i) for i in sample.peak_indices]
    pairs = dict(match_greedy(det_doas, sample.truth_doas))
    miss = np.zeros((k_rec, n_lam), dtype=np.uint8)
    area = np.zeros((k_rec, n_lam), dtype=float)
    for k in range(k_rec):
        lik = LikelihoodMap(sample.maps[k], grid, normalized=True)
        truth_idx = None
        if k in pairs:
            truth_idx = snap_to_grid(grid, sample.truth_doas[pairs[k]])
        sizes, covered = region_curves(lik, sample.peak_indices[k], lam_grid, truth_idx)
        area[k] = sizes / grid.size
        if covered is not None:
            miss[k] = (~covered).astype(np.uint8)
    return SampleCurves(lam_grid, sample.norm_peaks.copy(), sample.k_true, miss, area)


class CurveStack:
    """Sample curves stacked with the sample axis last (fast config sweeps)."""

    def __init__(self, curves_list):
        if not curves_list:
            raise ContractError("at least one sample is required")
        lam = curves_list[0].lam_grid
        k_max = curves_list[0].miss.shape[0]
        for c in curves_list:
            if c.miss.shape[0] != k_max or not np.array_equal(c.lam_grid, lam):
                raise ShapeError("samples disagree on lam grid or iteration count")
        self.lam_grid = lam
        self.k_max = k_max
        self.miss = np.stack([c.miss for c in curves_list], axis=-1)  # (k, n_lam, n)
        self.area = np.stack([c.area for c in curves_list], axis=-1)
        self.norm_peaks = np.stack([c.norm_peaks for c in curves_list], axis=-1)  # (k, n)
        self.k_true = np.array([c.k_true for c in curves_list], dtype=np.int64)

    @property
    def n_samples(self):
        return self.k_true.size

    def subset(self, indices):
        out = object.__new__(CurveStack)
        out.lam_grid = self.lam_grid
        out.k_max = self.k_max
        out.miss = self.miss[..., indices]
        out.area = self.area[..., indices]
        out.norm_peaks = self.norm_peaks[..., indices]
        out.k_true = self.k_true[indices]
        return out

    def khat_table(self, beta_values):
        """(n_beta, n_samples) estimated counts via the prefix rule."""
        beta_values = np.asarray(beta_values, dtype=float)
        ok = self.norm_peaks[None, :, :] >= beta_values[:, None, None]
        return np.logical_and.accumulate(ok, axis=1).sum(axis=1).astype(np.int64)


def khat_from_peaks(norm_peaks, beta):
    """Prefix count of peaks >= beta along axis 0."""
    ok = np.asarray(norm_peaks) >= beta
    return np.logical_and.accumulate(ok, axis=0).sum(axis=0).astype(np.int64)


def _gather(stack_arr, lam_idx):
    # stack_arr: (k_max, n_lam, n); lam_idx: (k_max,) -> (k_max, n)
    k_max = stack_arr.shape[0]
    return stack_arr[np.arange(k_max), np.asarray(lam_idx, dtype=np.int64), :]


def loss_mc_known(stack, k, lam_idx):
    """Per-sample binary miscoverage for source slot k at one lam (by index)."""
    if np.any(stack.k_true <= k):
        raise ContractError(f"slot {k} has no matched truth for some samples")
    return stack.miss[k, lam_idx, :].astype(np.int64)


def losses_unknown(stack, lam_idx, beta_idx, beta_values, khat_tab=None):
    """All four per-sample losses at one configuration (grid-indexed).

    Returns dict of arrays (n_samples,): 'mc' and counts are integers; 'pa'
    is the mean covered-area fraction over the first khat slots (0 when
    khat == 0).
    """
    if khat_tab is None:
        khat_tab = stack.khat_table(beta_values)
    khat = khat_tab[beta_idx]
    beta = float(beta_values[beta_idx])
    k_range = np.arange(stack.k_max)[:, None]
    miss_g = _gather(stack.miss, lam_idx)
    area_g = _gather(stack.area, lam_idx)
    active_mc = (k_range < np.minimum(stack.k_true, khat)[None, :]) & (
        stack.norm_peaks >= beta
    )
    mc = (miss_g * active_mc).sum(axis=0, dtype=np.int64)
    md = np.maximum(stack.k_true - khat, 0)
    fa = np.maximum(khat - stack.k_true, 0)
    active_pa = k_range < khat[None, :]
    pa = (area_g * active_pa).sum(axis=0) / np.maximum(khat, 1)
    pa = np.where(khat == 0, 0.0, pa)
    return {"mc": mc, "md": md, "fa": fa, "pa": pa}


def losses_known(stack, lam_idx):
    """Aggregated per-sample losses when the source count is known.

    'mc' sums the per-source miscoverage indicators over the true sources;
    'pa' averages the per-source area fractions.
    """
    k_range = np.arange(stack.k_max)[:, None]
    active = k_range < stack.k_true[None, :]
    miss_g = _gather(stack.miss, lam_idx)
    area_g = _gather(stack.area, lam_idx)
    mc = (miss_g * active).sum(axis=0, dtype=np.int64)
    pa = (area_g * active).sum(axis=0) / stack.k_true
    return {"mc": mc, "pa": pa}


@dataclass(frozen=True)
class ConfigGrid:
    """Cartesian product of per-slot lam values and beta values.

    Flat enumeration is row-major over (lam_1, ..., lam_k_max, beta) with
    beta varying fastest.
    """

    lam_values: np.ndarray
    beta_values: np.ndarray
    k_max: int

    def __post_init__(self):
        object.__setattr__(self, "lam_values", np.asarray(self.lam_values, dtype=float))
        object.__setattr__(self, "beta_values", np.asarray(self.beta_values, dtype=float))

    @classmethod
    def uniform(cls, k_max, n_lam=15, n_beta=None):
        if n_beta is None:
            n_beta = n_lam
        return cls(np.linspace(0.0, 1.0, n_lam), np.linspace(0.0, 1.0, n_beta), k_max)

    @property
    def n_configs(self):
        return int(self.lam_values.size**self.k_max * self.beta_values.size)

    def index_arrays(self):
        """(n_cfg, k_max) lam indices and (n_cfg,) beta indices."""
        shape = (self.lam_values.size,) * self.k_max + (self.beta_values.size,)
        grids = np.indices(shape).reshape(self.k_max + 1, -1)
        return grids[: self.k_max].T.copy(), grids[self.k_max].copy()

    def config(self, flat_index):
        n_lam = self.lam_values.size
        n_beta = self.beta_values.size
        flat_index = int(flat_index)
        beta_i = flat_index % n_beta
        rest = flat_index // n_beta
        lam_i = []
        for _ in range(self.k_max):
            lam_i.append(rest % n_lam)
            rest //= n_lam
        lam_i = lam_i[::-1]
        return ConfigVector(
            tuple(self.lam_values[i] for i in lam_i), float(self.beta_values[beta_i])
        )


def sweep_risks_unknown(stack, grid):
    """Empirical mean of each loss at every configuration of the grid.

    Returns (risks, lam_idx, beta_idx) where risks is (n_cfg, 4) with columns
    ordered (md, mc, fa, pa). Each configuration is evaluated through the
    same code path as losses_unknown, so the sweep is exactly reproducible
    config-by-config.
    """
    lam_idx, beta_idx = grid.index_arrays()
    khat_tab = stack.khat_table(grid.beta_values)
    n_cfg = lam_idx.shape[0]
    risks = np.empty((n_cfg, 4))
    for j in range(n_cfg):
        ls = losses_unknown(stack, lam_idx[j], beta_idx[j], grid.beta_values, khat_tab)
        risks[j, 0] = np.mean(ls["md"])
        risks[j, 1] = np.mean(ls["mc"])
        risks[j, 2] = np.mean(ls["fa"])
        risks[j, 3] = np.mean(ls["pa"])
    return risks, lam_idx, beta_idx


def sweep_risks_known(stack, lam_values, k):
    """Empirical (mc, pa) risk surface over the k-fold product of lam_values."""
    n_lam = len(lam_values)
    lam_idx = np.indices((n_lam,) * k).reshape(k, -1).T.copy()
    n_cfg = lam_idx.shape[0]
    risks = np.empty((n_cfg, 2))
    for j in range(n_cfg):
        ls = losses_known(stack, lam_idx[j])
        risks[j, 0] = np.mean(ls["mc"])
        risks[j, 1] = np.mean(ls["pa"])
    return risks, lam_idx


# ---------------------------------------------------------------------------
# columnar loss-table exchange


def export_loss_table(path, rows):
    """Write (config_id, sample_id, kind, value) rows as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config_id", "sample_id", "kind", "value"])
        for config_id, sample_id, kind, value in rows:
            writer.writerow([config_id, sample_id, kind, repr(float(value))])


def import_loss_table(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["config_id", "sample_id", "kind", "value"]:
            raise ContractError(f"{path}: unexpected loss-table header {header}")
        for rec in reader:
            rows.append((int(rec[0]), int(rec[1]), rec[2], float(rec[3])))
    return rows


def loss_table_rows(stack, grid, config_ids):
    """Materialize exportable per-sample losses for selected configurations."""
    khat_tab = stack.khat_table(grid.beta_values)
    lam_idx, beta_idx = grid.index_arrays()
    rows = []
    for cid in config_ids:
        ls = losses_unknown(stack, lam_idx[cid], beta_idx[cid], grid.beta_values, khat_tab)
        for kind in ("mc", "md", "fa", "pa"):
            for sid, value in enumerate(ls[kind]):
                rows.append((int(cid), sid, kind, float(value)))
    return rows
