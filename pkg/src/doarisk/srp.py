"""Steered-response-power maps over a spherical DOA grid.

Maps follow the phase-transform formulation: the average over mic pairs,
frames and in-band frequency bins of Re{psi * exp(-j w tau(p))}, which keeps
raw values inside [-1, 1].
"""
from __future__ import annotations

import functools
import struct
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, IngestionError, ShapeError
from .scene import SPEED_OF_SOUND, Doa
from .spectral import mic_pairs


@dataclass(frozen=True)
class DoaGrid:
    """Uniform elevation x azimuth grid; azimuth wraps, elevation does not.

    Flat indices are row-major with elevation as the slow axis.
    """

    n_el: int
    n_az: int
    el_start_deg: float = 0.0
    el_step_deg: float = 5.0
    az_start_deg: float = -180.0
    az_step_deg: float = 5.0

    def __post_init__(self):
        if self.n_el < 1 or self.n_az < 1:
            raise ShapeError("grid needs at least one point per axis")
        if self.el_step_deg <= 0 or self.az_step_deg <= 0:
            raise ShapeError("grid steps must be positive")
        el_stop = self.el_start_deg + (self.n_el - 1) * self.el_step_deg
        if self.el_start_deg < -1e-9 or el_stop > 180.0 + 1e-9:
            raise ShapeError("elevation samples must stay within [0, 180] degrees")
        if self.n_az * self.az_step_deg > 360.0 + 1e-9:
            raise ShapeError("azimuth samples must not span more than 360 degrees")

    @classmethod
    def default(cls, el_step_deg=5.0, az_step_deg=5.0):
        n_el = int(round(180.0 / el_step_deg)) + 1
        n_az = int(round(360.0 / az_step_deg))
        return cls(n_el, n_az, 0.0, el_step_deg, -180.0, az_step_deg)

    @property
    def size(self):
        return self.n_el * self.n_az

    def el_deg(self):
        return self.el_start_deg + self.el_step_deg * np.arange(self.n_el)

    def az_deg(self):
        return self.az_start_deg + self.az_step_deg * np.arange(self.n_az)

    def doa(self, flat_index):
        i, j = divmod(int(flat_index), self.n_az)
        if not (0 <= i < self.n_el):
            raise ShapeError(f"flat index {flat_index} outside grid of size {self.size}")
        return Doa.from_degrees(
            self.el_start_deg + i * self.el_step_deg, self.az_start_deg + j * self.az_step_deg
        )

    def unit_vectors(self):
        return _grid_unit_vectors(self)

    def matches(self, other, tol=1e-9):
        return (
            self.n_el == other.n_el
            and self.n_az == other.n_az
            and abs(self.el_start_deg - other.el_start_deg) <= tol
            and abs(self.el_step_deg - other.el_step_deg) <= tol
            and abs(self.az_start_deg - other.az_start_deg) <= tol
            and abs(self.az_step_deg - other.az_step_deg) <= tol
        )


@functools.lru_cache(maxsize=32)
def _grid_unit_vectors(grid):
    el = np.radians(grid.el_deg())
    az = np.radians(grid.az_deg())
    se, ce = np.sin(el), np.cos(el)
    ca, sa = np.cos(az), np.sin(az)
    u = np.empty((grid.size, 3))
    u[:, 0] = np.outer(se, ca).ravel()
    u[:, 1] = np.outer(se, sa).ravel()
    u[:, 2] = np.repeat(ce, grid.n_az)
    return u


@dataclass(frozen=True)
class LikelihoodMap:
    """A spatial likelihood surface over a DoaGrid."""

    values: np.ndarray
    grid: DoaGrid
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_el, self.grid.n_az):
            raise ShapeError(f"map shape {v.shape} does not match grid "
                             f"({self.grid.n_el}, {self.grid.n_az})")
        object.__setattr__(self, "values", v)

    def peak_index(self):
        return int(np.argmax(self.values))


def expected_tdoa(mic_a, mic_b, doa, c=SPEED_OF_SOUND):
    """Far-field delay (seconds) of mic_a relative to mic_b for a plane wave."""
    diff = np.asarray(mic_a, dtype=float) - np.asarray(mic_b, dtype=float)
    return float(np.dot(diff, doa.unit_vector())) / c


def pair_tdoa_table(array, grid, c=SPEED_OF_SOUND):
    """TDOA (seconds) for every mic pair at every grid direction, (P, |G|)."""
    pairs = mic_pairs(array.n_mics)
    pos = array.positions
    diffs = np.stack([pos[m] - pos[mp] for m, mp in pairs])
    return diffs @ grid.unit_vectors().T / c


class SteeringTable:
    """Cached steering phases exp(-j w tau(p)) per pair over the band bins."""

    def __init__(self, grid, array, freqs_hz, band_hz=(100.0, 4000.0), c=SPEED_OF_SOUND):
        freqs_hz = np.asarray(freqs_hz, dtype=float)
        lo, hi = band_hz
        band_idx = np.nonzero((freqs_hz >= lo) & (freqs_hz <= hi))[0]
        if band_idx.size == 0:
            raise ShapeError(f"no frequency bins inside the band {band_hz}")
        self.grid = grid
        self.array = array
        self.band_hz = (float(lo), float(hi))
        self.c = c
        self.freqs_hz = freqs_hz
        self.band_idx = band_idx
        self.omega_band = 2.0 * np.pi * freqs_hz[band_idx]
        self.pairs = mic_pairs(array.n_mics)
        self.tau = pair_tdoa_table(array, grid, c)
        self._phases = [None] * len(self.pairs)

    @property
    def n_band_bins(self):
        return self.band_idx.size

    def steering(self, pair_index):
        """(|G|, n_band_bins) complex phases for one mic pair."""
        if self._phases[pair_index] is None:
            phase = np.exp(-1j * np.outer(self.tau[pair_index], self.omega_band))
            self._phases[pair_index] = phase
        return self._phases[pair_index]

    def compatible_with(self, psi):
        return (
            len(self.pairs) == psi.n_pairs
            and self.freqs_hz.size == psi.n_bins
            and np.allclose(self.freqs_hz, psi.freqs_hz())
        )


def srp_map(psi, grid, array=None, *, steering=None, band_hz=(100.0, 4000.0), c=SPEED_OF_SOUND):
    """Steered response power with phase transform over the grid.

    Either a prebuilt SteeringTable or the mic array must be given. The
    result is the raw (unnormalized) map; values lie in [-1, 1].
    """
    if steering is None:
        if array is None:
            raise ShapeError("either a steering table or the mic array is required")
        steering = SteeringTable(grid, array, psi.freqs_hz(), band_hz, c)
    if not steering.compatible_with(psi):
        raise ShapeError("steering table does not match the cross-spectrum layout")
    psi_sum = psi.values.sum(axis=1)  # collapse frames first; the map is linear in psi
    acc = np.zeros(grid.size, dtype=complex)
    for i in range(len(steering.pairs)):
        acc += steering.steering(i) @ psi_sum[i, steering.band_idx]
    n_terms = len(steering.pairs) * psi.n_frames * steering.n_band_bins
    values = acc.real / n_terms
    return LikelihoodMap(values.reshape(grid.n_el, grid.n_az), grid, normalized=False)


def normalize_map(m):
    """Affine rescale of a map onto [0, 1]; constant maps become all zeros."""
    v = m.values
    lo = float(v.min())
    hi = float(v.max())
    if hi - lo <= 0.0:
        return LikelihoodMap(np.zeros_like(v), m.grid, normalized=True)
    return LikelihoodMap((v - lo) / (hi - lo), m.grid, normalized=True)


# ---------------------------------------------------------------------------
# map-exchange binary format

_MAGIC = b"DOAMAPS1"
_HEADER = struct.Struct("<8sHHIIddddIId")
_FLAG_NORMALIZED = 1


@dataclass(frozen=True)
class MapRecord:
    """One exported map plus its declared peak."""

    map: LikelihoodMap
    iteration: int
    peak_index: int
    peak_value: float


def export_map_sequence(path, records):
    """Write an ordered sequence of map records to a binary exchange file."""
    with open(path, "wb") as fh:
        for rec in records:
            grid = rec.map.grid
            flags = _FLAG_NORMALIZED if rec.map.normalized else 0
            fh.write(
                _HEADER.pack(
                    _MAGIC,
                    1,
                    flags,
                    grid.n_el,
                    grid.n_az,
                    grid.el_start_deg,
                    grid.el_step_deg,
                    grid.az_start_deg,
                    grid.az_step_deg,
                    rec.iteration,
                    rec.peak_index,
                    rec.peak_value,
                )
            )
            fh.write(np.ascontiguousarray(rec.map.values, dtype="<f4").tobytes())


def import_map_sequence(path, expected_grid=None):
    """Read back a map-exchange file; optionally enforce a grid layout."""
    records = []
    with open(path, "rb") as fh:
        while True:
            header = fh.read(_HEADER.size)
            if not header:
                break
            if len(header) < _HEADER.size:
                raise IngestionError(f"{path}: truncated record header")
            (magic, version, flags, n_el, n_az, el0, del_, az0, daz, iteration, peak_idx,
             peak_val) = _HEADER.unpack(header)
            if magic != _MAGIC:
                raise IngestionError(f"{path}: bad magic {magic!r}")
            if version != 1:
                raise IngestionError(f"{path}: unsupported version {version}")
            grid = DoaGrid(n_el, n_az, el0, del_, az0, daz)
            if expected_grid is not None and not grid.matches(expected_grid):
                raise GridMismatchError(
                    f"{path}: file grid {n_el}x{n_az} step ({del_}, {daz}) does not match "
                    f"the configured grid {expected_grid.n_el}x{expected_grid.n_az} "
                    f"step ({expected_grid.el_step_deg}, {expected_grid.az_step_deg})"
                )
            payload = fh.read(4 * n_el * n_az)
            if len(payload) < 4 * n_el * n_az:
                raise IngestionError(f"{path}: truncated map payload")
            values = np.frombuffer(payload, dtype="<f4").astype(float).reshape(n_el, n_az)
            if peak_idx >= n_el * n_az:
                raise IngestionError(f"{path}: declared peak index {peak_idx} outside grid")
            records.append(
                MapRecord(
                    LikelihoodMap(values, grid, normalized=bool(flags & _FLAG_NORMALIZED)),
                    iteration,
                    int(peak_idx),
                    float(peak_val),
                )
            )
    return records
