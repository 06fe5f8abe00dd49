"""Distribution-free risk control: threshold selection and multiple testing.

Contains the conformal-style monotone threshold selection, betting-martingale
and binomial p-values, fixed-sequence / Bonferroni testing, Pareto-front
recovery, and the two-stage Pareto testing pipeline that returns a set of
risk-certified operating points.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binom

from .errors import (
    ContractError,
    DegenerateStatisticsError,
    NoValidConfigurationError,
)
from .losses import (
    ConfigGrid,
    ConfigVector,
    losses_known,
    losses_unknown,
    sweep_risks_known,
    sweep_risks_unknown,
)


def crc_select(loss_matrix, lam_grid, alpha):
    """Largest grid lam whose empirical risk meets the corrected level.

    ``loss_matrix`` holds per-sample binary losses, one column per candidate
    lam (losses assumed non-decreasing in lam). Selects the largest lam with
    mean loss <= alpha - (1 - alpha) / n; falls back to lam = 0 when no grid
    value qualifies. Returns (lam, grid_index_or_None).
    """
    loss_matrix = np.asarray(loss_matrix)
    lam_grid = np.asarray(lam_grid, dtype=float)
    if loss_matrix.ndim != 2 or loss_matrix.shape[1] != lam_grid.size:
        raise ContractError("loss matrix must be (n_samples, n_lam)")
    n = loss_matrix.shape[0]
    if n < 1:
        raise ContractError("at least one calibration sample is required")
    if not (0.0 < alpha < 1.0):
        raise ContractError(f"alpha must lie in (0, 1), got {alpha}")
    rhat = loss_matrix.mean(axis=0)
    qualified = np.nonzero(rhat <= alpha - (1.0 - alpha) / n)[0]
    if qualified.size == 0:
        return 0.0, None
    j = int(qualified[-1])
    return float(lam_grid[j]), j


def wsr_pvalue(losses, alpha, delta=0.1, bounds=(0.0, 1.0)):
    """Betting-martingale p-value for H0: E[loss] > alpha.

    Walks through the losses once, betting against the null with an
    empirical-Bernstein bet size; the p-value is one over the best capital
    reached (Ville's inequality makes it super-uniform under the null).
    """
    return float(wsr_pvalue_batch(np.asarray(losses, dtype=float)[None, :], alpha, delta, bounds)[0])


def wsr_pvalue_batch(loss_matrix, alpha, delta=0.1, bounds=(0.0, 1.0)):
    """Vectorized wsr_pvalue over rows of (m, n) losses."""
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (lo < alpha < hi):
        raise ContractError(f"alpha {alpha} must lie strictly inside bounds {bounds}")
    if not (0.0 < delta < 1.0):
        raise ContractError(f"delta must lie in (0, 1), got {delta}")
    ell = np.ascontiguousarray(loss_matrix, dtype=float)
    if ell.ndim != 2 or ell.shape[1] < 1:
        raise ContractError("loss matrix must be (m, n>=1)")
    if ell.min() < lo - 1e-12 or ell.max() > hi + 1e-12:
        raise ContractError(f"losses outside declared bounds [{lo}, {hi}]")
    n = ell.shape[1]
    count = np.arange(1, n + 1, dtype=float)
    mu = (0.5 + np.cumsum(ell, axis=1)) / (1.0 + count)
    sig2 = (0.25 + np.cumsum((ell - mu) ** 2, axis=1)) / (1.0 + count)
    sig2_prev = np.concatenate(
        [np.full((ell.shape[0], 1), 0.25), sig2[:, :-1]], axis=1
    )
    nu = np.minimum(1.0 / (hi - lo), np.sqrt(2.0 * np.log(1.0 / delta) / (n * sig2_prev)))
    capital = np.cumprod(1.0 - nu * (ell - alpha), axis=1)
    best = capital.max(axis=1)
    return np.minimum(1.0, 1.0 / best)


def binom_pvalue(losses, alpha):
    """Exact binomial tail p-value for binary losses against level alpha."""
    ell = np.asarray(losses)
    if not np.isin(ell, (0, 1)).all():
        raise ContractError("binomial p-value needs binary losses")
    n = ell.size
    return float(binom.cdf(int(ell.sum()), n, alpha))


def aggregate_pvalue(mc_losses, md_losses, alpha_mc, alpha_md, delta, k_max):
    """Combined evidence that both constrained risks are controlled."""
    p_mc = wsr_pvalue(mc_losses, alpha_mc, delta, bounds=(0.0, k_max))
    p_md = wsr_pvalue(md_losses, alpha_md, delta, bounds=(0.0, k_max))
    return max(p_mc, p_md)


def bonferroni_reject(p_values, delta):
    """Reference Bonferroni correction: reject where p <= delta / m."""
    p = np.asarray(p_values, dtype=float)
    return p <= delta / p.size


def fixed_sequence_reject(p_values_in_order, delta):
    """Number of leading hypotheses rejected by fixed-sequence testing.

    Walks the ordered p-values and stops at the first one exceeding delta;
    hypotheses after the stopping point never influence the result.
    """
    count = 0
    for p in p_values_in_order:
        if p > delta:
            break
        count += 1
    return count


def pareto_front_mask(values):
    """Boolean mask of non-dominated rows (minimization everywhere).

    A row is dominated when some other row is <= in every objective and
    strictly < in at least one; identical rows never dominate each other.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ContractError("objective matrix must be (n>=1, d)")
    uniq, inverse = np.unique(v, axis=0, return_inverse=True)
    m, d = uniq.shape
    keep = np.ones(m, dtype=bool)
    archive = np.empty((m, d))
    count = 0
    # rows come out of np.unique lexicographically sorted, so any dominator of
    # a row precedes it; testing against the running archive suffices
    for i in range(m):
        row = uniq[i]
        if count:
            arch = archive[:count]
            dominated = np.any(
                np.all(arch <= row, axis=1) & np.any(arch < row, axis=1)
            )
            if dominated:
                keep[i] = False
                continue
        archive[count] = row
        count += 1
    return keep[inverse.ravel()]


def shift_normalize(maps, mode="pool_all", peaks=None):
    """Affine re-normalization of a map collection by pooled quantiles.

    Subtracts the pooled median and divides by (q99 - median). ``mode``
    selects the pooled collection: every map value, or only the supplied
    per-map peak values. Returns (normalized maps, stats dict).
    """
    arrays = [np.asarray(m, dtype=float) for m in maps]
    if mode == "pool_all":
        pooled = np.concatenate([a.ravel() for a in arrays])
    elif mode == "peaks_only":
        if peaks is None:
            raise ContractError("peaks_only mode requires the peak values")
        pooled = np.asarray(peaks, dtype=float).ravel()
    else:
        raise ContractError(f"unknown normalization mode {mode!r}")
    if pooled.size < 100:
        raise ContractError(
            f"pooled collection has only {pooled.size} values; at least 100 required"
        )
    q50 = float(np.quantile(pooled, 0.5, method="lower"))
    q99 = float(np.quantile(pooled, 0.99, method="lower"))
    if q99 <= q50:
        raise DegenerateStatisticsError(
            f"pooled quantiles are degenerate (q50={q50}, q99={q99})"
        )
    scale = q99 - q50
    return [(a - q50) / scale for a in arrays], {"q50": q50, "q99": q99}


# ---------------------------------------------------------------------------
# two-stage Pareto testing


@dataclass
class TestingOutcome:
    """Result of the split-calibrate-test pipeline."""

    __test__ = False  # keep pytest from collecting this as a test class

    configs: list  # ConfigVector per sorted candidate
    p_opt: np.ndarray
    p_tst: np.ndarray  # NaN where never evaluated (after the stopping index)
    stop_index: int
    rejected: list  # indices into `configs` that passed fixed-sequence testing
    final: list  # indices into `configs` on the final free-objective front
    fa_tst: np.ndarray
    pa_tst: np.ndarray
    no_valid: bool
    fallback: ConfigVector | None = None

    def final_configs(self):
        return [self.configs[i] for i in self.final]


def pareto_testing(
    stack,
    grid,
    alpha_mc,
    alpha_md,
    delta,
    rng,
    *,
    opt_fraction=0.5,
):
    """Unknown-count calibration over a (lam_1..lam_K, beta) grid.

    Splits the calibration samples, recovers the four-objective empirical
    Pareto front on the optimization half, orders it by combined p-value,
    applies fixed-sequence testing on the held-out half, and keeps the
    (false-alarm, area) front of the surviving configs.
    """
    n = stack.n_samples
    if n < 4:
        raise ContractError("pareto testing needs at least 4 samples")
    perm = rng.permutation(n)
    n_opt = int(round(n * opt_fraction))
    if n_opt < 2 or n - n_opt < 2:
        raise ContractError("split leaves too few samples on one side")
    opt = stack.subset(perm[:n_opt])
    tst = stack.subset(perm[n_opt:])
    k_max = stack.k_max

    risks, lam_idx, beta_idx = sweep_risks_unknown(opt, grid)  # columns md, mc, fa, pa
    front = np.nonzero(pareto_front_mask(risks))[0]

    khat_opt = opt.khat_table(grid.beta_values)
    mc_mat = np.empty((front.size, opt.n_samples))
    md_mat = np.empty((front.size, opt.n_samples))
    for row, j in enumerate(front):
        ls = losses_unknown(opt, lam_idx[j], beta_idx[j], grid.beta_values, khat_opt)
        mc_mat[row] = ls["mc"]
        md_mat[row] = ls["md"]
    p_opt = np.maximum(
        wsr_pvalue_batch(mc_mat, alpha_mc, delta, bounds=(0.0, k_max)),
        wsr_pvalue_batch(md_mat, alpha_md, delta, bounds=(0.0, k_max)),
    )

    # ascending p-value; ties broken by opt-split FA risk, then PA, then the
    # configuration itself (lexicographic) so the ordering is reproducible
    cfg_cols = [grid.beta_values[beta_idx[front]]]
    for k in range(k_max - 1, -1, -1):
        cfg_cols.append(grid.lam_values[lam_idx[front, k]])
    order = np.lexsort(tuple(cfg_cols) + (risks[front, 3], risks[front, 2], p_opt))
    sorted_front = front[order]
    p_opt_sorted = p_opt[order]

    khat_tst = tst.khat_table(grid.beta_values)
    p_tst = np.full(sorted_front.size, np.nan)
    tst_losses = {}
    stop = sorted_front.size
    for j, cfg in enumerate(sorted_front):
        ls = losses_unknown(tst, lam_idx[cfg], beta_idx[cfg], grid.beta_values, khat_tst)
        tst_losses[j] = ls
        p_tst[j] = max(
            wsr_pvalue(ls["mc"], alpha_mc, delta, bounds=(0.0, k_max)),
            wsr_pvalue(ls["md"], alpha_md, delta, bounds=(0.0, k_max)),
        )
        if p_tst[j] > delta:
            stop = j
            break
    rejected = list(range(stop))

    configs = [
        ConfigVector(
            tuple(grid.lam_values[lam_idx[cfg, k]] for k in range(k_max)),
            float(grid.beta_values[beta_idx[cfg]]),
        )
        for cfg in sorted_front
    ]
    fa_tst = np.full(sorted_front.size, np.nan)
    pa_tst = np.full(sorted_front.size, np.nan)
    for j in rejected:
        fa_tst[j] = np.mean(tst_losses[j]["fa"])
        pa_tst[j] = np.mean(tst_losses[j]["pa"])

    if not rejected:
        fallback = ConfigVector((0.0,) * k_max, 0.0)
        return TestingOutcome(
            configs, p_opt_sorted, p_tst, stop, [], [], fa_tst, pa_tst, True, fallback
        )
    objective = np.stack([fa_tst[rejected], pa_tst[rejected]], axis=1)
    final_mask = pareto_front_mask(objective)
    final = [rejected[i] for i in np.nonzero(final_mask)[0]]
    return TestingOutcome(
        configs, p_opt_sorted, p_tst, stop, rejected, final, fa_tst, pa_tst, False
    )


def pareto_testing_known(stack, lam_values, k, alpha_mc, delta, rng, *, opt_fraction=0.5):
    """Known-count calibration over the k-fold product of lam_values.

    One constrained risk (sum of per-source miscoverages, bounded by k) and
    one free objective (mean area). The final set is every surviving config
    attaining the minimal test-split area.
    """
    n = stack.n_samples
    if n < 4:
        raise ContractError("pareto testing needs at least 4 samples")
    perm = rng.permutation(n)
    n_opt = int(round(n * opt_fraction))
    if n_opt < 2 or n - n_opt < 2:
        raise ContractError("split leaves too few samples on one side")
    opt = stack.subset(perm[:n_opt])
    tst = stack.subset(perm[n_opt:])

    risks, lam_idx = sweep_risks_known(opt, lam_values, k)  # columns mc, pa
    front = np.nonzero(pareto_front_mask(risks))[0]

    mc_mat = np.empty((front.size, opt.n_samples))
    for row, j in enumerate(front):
        mc_mat[row] = losses_known(opt, lam_idx[j])["mc"]
    p_opt = wsr_pvalue_batch(mc_mat, alpha_mc, delta, bounds=(0.0, k))

    lam_values = np.asarray(lam_values, dtype=float)
    cfg_cols = [lam_values[lam_idx[front, kk]] for kk in range(k - 1, -1, -1)]
    order = np.lexsort(tuple(cfg_cols) + (risks[front, 1], p_opt))
    sorted_front = front[order]
    p_opt_sorted = p_opt[order]

    p_tst = np.full(sorted_front.size, np.nan)
    pa_tst = np.full(sorted_front.size, np.nan)
    mc_tst = np.full(sorted_front.size, np.nan)
    stop = sorted_front.size
    for j, cfg in enumerate(sorted_front):
        ls = losses_known(tst, lam_idx[cfg])
        p_tst[j] = wsr_pvalue(ls["mc"], alpha_mc, delta, bounds=(0.0, k))
        pa_tst[j] = np.mean(ls["pa"])
        mc_tst[j] = np.mean(ls["mc"])
        if p_tst[j] > delta:
            stop = j
            break
    rejected = list(range(stop))

    configs = [
        ConfigVector(tuple(lam_values[lam_idx[cfg, kk]] for kk in range(k)), None)
        for cfg in sorted_front
    ]
    if not rejected:
        fallback = ConfigVector((0.0,) * k, None)
        return TestingOutcome(
            configs, p_opt_sorted, p_tst, stop, [], [], mc_tst, pa_tst, True, fallback
        )
    best = np.nanmin(pa_tst[rejected])
    final = [j for j in rejected if pa_tst[j] == best]
    return TestingOutcome(
        configs, p_opt_sorted, p_tst, stop, rejected, final, mc_tst, pa_tst, False
    )


def select_operating_point(outcome, criterion="min_fa", weights=(0.5, 0.5)):
    """Pick one configuration from the final certified set.

    Criteria: 'min_fa', 'min_pa', or 'weighted' (weights over fa and pa).
    Ties resolve to the lexicographically smallest configuration. Raises
    NoValidConfigurationError when the final set is empty.
    """
    if not outcome.final:
        raise NoValidConfigurationError(
            "no configuration passed testing; only the conservative fallback exists"
        )
    idx = np.array(outcome.final)
    fa = outcome.fa_tst[idx]
    pa = outcome.pa_tst[idx]
    if criterion == "min_fa":
        key = fa
    elif criterion == "min_pa":
        key = pa
    elif criterion == "weighted":
        key = weights[0] * fa + weights[1] * pa
    else:
        raise ContractError(f"unknown selection criterion {criterion!r}")
    candidates = idx[key == key.min()]
    chosen = min(
        candidates,
        key=lambda j: (outcome.configs[j].lams, -np.inf if outcome.configs[j].beta is None
                       else outcome.configs[j].beta),
    )
    return outcome.configs[int(chosen)]


def outcome_to_dict(outcome):
    return {
        "no_valid": outcome.no_valid,
        "stop_index": int(outcome.stop_index),
        "configs": [
            {"lams": list(c.lams), "beta": c.beta} for c in outcome.configs
        ],
        "p_opt": [float(v) for v in outcome.p_opt],
        "p_tst": [None if np.isnan(v) else float(v) for v in outcome.p_tst],
        "rejected": [int(i) for i in outcome.rejected],
        "final": [int(i) for i in outcome.final],
        "fa_tst": [None if np.isnan(v) else float(v) for v in outcome.fa_tst],
        "pa_tst": [None if np.isnan(v) else float(v) for v in outcome.pa_tst],
        "fallback": None
        if outcome.fallback is None
        else {"lams": list(outcome.fallback.lams), "beta": outcome.fallback.beta},
    }


def save_outcome(path, outcome):
    with open(path, "w") as fh:
        json.dump(outcome_to_dict(outcome), fh, indent=2, sort_keys=True)
        fh.write("\n")
