"""Flood-fill prediction regions on DOA grids.

A region at level lam is grown from a seed cell by repeatedly absorbing
4-connected neighbors (azimuth wraps around; elevation rows do not, and the
two pole rows are not identified) whose map value is >= lam. The seed itself
is always a member regardless of its value.
"""
from __future__ import annotations

import functools
import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .scene import doa_unit_vector


@functools.lru_cache(maxsize=32)
def neighbor_table(grid):
    """(|G|, 4) flat neighbor indices (up/down/left/right), -1 where absent."""
    n_el, n_az = grid.n_el, grid.n_az
    idx = np.arange(n_el * n_az).reshape(n_el, n_az)
    out = np.full((n_el * n_az, 4), -1, dtype=np.int64)
    out[:, 0] = np.vstack([np.full((1, n_az), -1, dtype=np.int64), idx[:-1]]).ravel()
    out[:, 1] = np.vstack([idx[1:], np.full((1, n_az), -1, dtype=np.int64)]).ravel()
    left = np.roll(idx, 1, axis=1)
    right = np.roll(idx, -1, axis=1)
    if n_az == 1:  # a single azimuth column has no lateral neighbors
        left[:] = -1
        right[:] = -1
    out[:, 2] = left.ravel()
    out[:, 3] = right.ravel()
    return out


@dataclass(frozen=True)
class PredictionRegion:
    """A set of grid cells predicted to contain a source."""

    member_indices: frozenset
    seed_index: int
    lam: float
    grid: object

    @property
    def size(self):
        return len(self.member_indices)

    def area_fraction(self):
        return len(self.member_indices) / self.grid.size

    def __contains__(self, flat_index):
        return int(flat_index) in self.member_indices


def grow_region(lik_map, seed_index, lam):
    """Breadth-first flood fill from the seed at threshold lam."""
    grid = lik_map.grid
    seed_index = int(seed_index)
    if not (0 <= seed_index < grid.size):
        raise ShapeError(f"seed index {seed_index} outside grid of size {grid.size}")
    flat = lik_map.values.ravel()
    nbrs = neighbor_table(grid)
    member = np.zeros(grid.size, dtype=bool)
    member[seed_index] = True  # the seed is included unconditionally
    queue = deque([seed_index])
    while queue:
        cur = queue.popleft()
        for nb in nbrs[cur]:
            if nb >= 0 and not member[nb] and flat[nb] >= lam:
                member[nb] = True
                queue.append(nb)
    return PredictionRegion(
        frozenset(np.nonzero(member)[0].tolist()), seed_index, float(lam), grid
    )


def region_area_fraction(region):
    return region.area_fraction()


def snap_to_grid(grid, doa):
    """Nearest grid cell to a direction by great-circle angle (ties -> lower index)."""
    dots = grid.unit_vectors() @ doa_unit_vector(doa)
    return int(np.argmax(dots))


def covers(region, doa):
    """Whether the region contains the direction after snapping it to the grid."""
    return snap_to_grid(region.grid, doa) in region


def bottleneck_scores(lik_map, seed_index):
    """Best achievable path bottleneck from the seed to every cell.

    score[q] = max over paths seed -> q of the minimum map value along the
    path (seed excluded); the seed itself scores +inf. A cell belongs to the
    flood-fill region at level lam exactly when score >= lam, which lets a
    whole lam-sweep reuse one traversal.
    """
    grid = lik_map.grid
    seed_index = int(seed_index)
    if not (0 <= seed_index < grid.size):
        raise ShapeError(f"seed index {seed_index} outside grid of size {grid.size}")
    flat = lik_map.values.ravel()
    nbrs = neighbor_table(grid)
    n = grid.size
    score = np.full(n, -np.inf)
    score[seed_index] = np.inf
    done = np.zeros(n, dtype=bool)
    done[seed_index] = True
    heap = []
    for nb in nbrs[seed_index]:
        if nb >= 0:
            heapq.heappush(heap, (-flat[nb], int(nb)))
    while heap:
        neg, cur = heapq.heappop(heap)
        if done[cur]:
            continue
        done[cur] = True
        score[cur] = -neg
        for nb in nbrs[cur]:
            if nb >= 0 and not done[nb]:
                heapq.heappush(heap, (-min(score[cur], flat[nb]), int(nb)))
    return score


def region_curves(lik_map, seed_index, lam_grid, truth_index=None):
    """Region size and coverage across a whole threshold sweep.

    Returns (sizes, covered): member counts per lam and, when a truth cell is
    given, a boolean coverage indicator per lam. Results are identical to
    growing each region independently.
    """
    lam_grid = np.asarray(lam_grid, dtype=float)
    scores = bottleneck_scores(lik_map, seed_index)
    others = np.delete(scores, int(seed_index))
    others_sorted = np.sort(others)
    # count of non-seed cells with score >= lam, plus the seed itself
    sizes = others.size - np.searchsorted(others_sorted, lam_grid, side="left") + 1
    covered = None
    if truth_index is not None:
        covered = scores[int(truth_index)] >= lam_grid
    return sizes.astype(np.int64), covered


def region_to_dict(region):
    """JSON-ready summary of a region (used by the report generator)."""
    return {
        "seed_index": int(region.seed_index),
        "lam": float(region.lam),
        "area_fraction": region.area_fraction(),
        "member_indices": sorted(int(i) for i in region.member_indices),
    }
