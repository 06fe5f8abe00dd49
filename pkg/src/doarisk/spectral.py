"""Short-time spectral analysis and phase-transform cross-spectra."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

PHAT_EPS = 1e-12


def mic_pairs(n_mics):
    """Canonical ordering of microphone pairs (m, m') with m < m'."""
    return tuple((m, mp) for m in range(n_mics) for mp in range(m + 1, n_mics))


@dataclass(frozen=True)
class StftTensor:
    """Complex STFT frames, values shaped (channels, frames, bins)."""

    values: np.ndarray
    window: int
    hop: int
    sample_rate: float

    @property
    def n_channels(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]

    @property
    def n_bins(self):
        return self.values.shape[2]

    def freqs_hz(self):
        return np.fft.rfftfreq(self.window, 1.0 / self.sample_rate)


@dataclass(frozen=True)
class PairCrossSpectrum:
    """Per-pair cross-spectra, values shaped (pairs, frames, bins)."""

    values: np.ndarray
    pairs: tuple
    window: int
    hop: int
    sample_rate: float

    @property
    def n_pairs(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]

    @property
    def n_bins(self):
        return self.values.shape[2]

    def freqs_hz(self):
        return np.fft.rfftfreq(self.window, 1.0 / self.sample_rate)


def stft(signal, window=1024, hop=None):
    """Hann-windowed one-sided STFT with no padding.

    Frames start at multiples of ``hop``; a trailing remainder shorter than
    ``window`` is dropped, so n_frames = (N - window) // hop + 1.
    """
    if hop is None:
        hop = window // 2
    if window < 2 or hop < 1:
        raise ShapeError(f"bad analysis parameters window={window} hop={hop}")
    x = signal.samples
    n = x.shape[1]
    if n < window:
        raise ShapeError(f"signal of {n} samples is shorter than the {window}-sample window")
    n_frames = (n - window) // hop + 1
    idx = np.arange(n_frames)[:, None] * hop + np.arange(window)[None, :]
    frames = x[:, idx] * np.hanning(window)
    values = np.fft.rfft(frames, axis=-1)
    return StftTensor(values, window, hop, signal.sample_rate)


def cross_spectrum_phat(x, eps=PHAT_EPS):
    """Phase-transform cross-spectra for every ordered mic pair (m < m').

    Magnitudes are normalized away; bins whose raw cross-power magnitude is
    below ``eps`` are set to zero so they drop out of downstream sums.
    """
    pairs = mic_pairs(x.n_channels)
    v = x.values
    out = np.empty((len(pairs), x.n_frames, x.n_bins), dtype=complex)
    for i, (m, mp) in enumerate(pairs):
        prod = v[m] * np.conj(v[mp])
        mag = np.abs(prod)
        out[i] = np.where(mag < eps, 0.0, prod / np.where(mag < eps, 1.0, mag))
    return PairCrossSpectrum(out, pairs, x.window, x.hop, x.sample_rate)
