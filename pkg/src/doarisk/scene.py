"""Rectangular-room acoustic scene simulation.

Covers array/DOA geometry, image-source room impulse responses with
windowed-sinc fractional delays, speech-like burst excitation, scene
synthesis and white-noise corruption at a target SNR.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

from .errors import CapacityError, InvalidSceneError, ShapeError, UndefinedSnrError

SPEED_OF_SOUND = 343.0

# Half-width of the fractional-delay kernel: 81 taps total.
_SINC_HALF_WIDTH = 40


@dataclass(frozen=True)
class Doa:
    """Direction of arrival in radians.

    ``elevation`` is the inclination angle from the +z axis in [0, pi];
    ``azimuth`` is measured in the x-y plane in [-pi, pi] and is circular.
    """

    elevation: float
    azimuth: float

    def __post_init__(self):
        if not (0.0 <= self.elevation <= math.pi + 1e-12):
            raise ValueError(f"elevation {self.elevation} outside [0, pi]")
        if not (-math.pi - 1e-12 <= self.azimuth <= math.pi + 1e-12):
            raise ValueError(f"azimuth {self.azimuth} outside [-pi, pi]")

    @classmethod
    def from_degrees(cls, elevation_deg, azimuth_deg):
        return cls(math.radians(elevation_deg), math.radians(azimuth_deg))

    @property
    def elevation_deg(self):
        return math.degrees(self.elevation)

    @property
    def azimuth_deg(self):
        return math.degrees(self.azimuth)

    def unit_vector(self):
        return doa_unit_vector(self)


def doa_unit_vector(doa):
    """Unit vector [sin(el)cos(az), sin(el)sin(az), cos(el)] for a Doa."""
    se = math.sin(doa.elevation)
    return np.array(
        [se * math.cos(doa.azimuth), se * math.sin(doa.azimuth), math.cos(doa.elevation)]
    )


def angular_distance(a, b):
    """Great-circle angle (radians) between two directions."""
    dot = float(np.dot(doa_unit_vector(a), doa_unit_vector(b)))
    return math.acos(min(1.0, max(-1.0, dot)))


@dataclass(frozen=True)
class MicArray:
    """Microphone positions (M, 3) in meters, relative to the array center."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 2:
            raise ShapeError(f"mic positions must be (M>=2, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ShapeError("mic positions must be finite")
        # reject coincident microphones
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        if d.min() < 1e-9:
            raise ShapeError("mic positions must be pairwise distinct")
        object.__setattr__(self, "positions", pos)

    @property
    def n_mics(self):
        return self.positions.shape[0]


def pseudo_spherical_array(n_mics=12, radius=0.1):
    """Quasi-uniform microphone layout on a sphere of the given radius.

    n_mics == 12 uses the icosahedron vertices; other counts fall back to a
    Fibonacci spiral.
    """
    if n_mics == 12:
        g = (1.0 + math.sqrt(5.0)) / 2.0
        verts = []
        for a in (-1.0, 1.0):
            for b in (-g, g):
                verts.append([0.0, a, b])
                verts.append([a, b, 0.0])
                verts.append([b, 0.0, a])
        pts = np.array(verts)
    else:
        i = np.arange(n_mics)
        phi = math.pi * (3.0 - math.sqrt(5.0)) * i
        z = 1.0 - 2.0 * (i + 0.5) / n_mics
        r = np.sqrt(1.0 - z**2)
        pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    return MicArray(pts * radius)


@dataclass(frozen=True)
class MultichannelSignal:
    """Time-domain multichannel signal, samples shaped (M, N)."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2:
            raise ShapeError(f"samples must be 2-D (channels, time), got {s.shape}")
        object.__setattr__(self, "samples", s)

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]


@dataclass
class SceneSpec:
    """Declarative description of a simulated scene.

    Sources sit at ``source_range`` meters from the array center along the
    given DOAs; reverberation is an image-source model truncated at
    ``reflection_order`` with a uniform per-reflection amplitude coefficient.
    """

    room_dims: tuple
    array: MicArray
    array_center: tuple
    source_doas: list
    source_range: float = 1.5
    reflection_order: int = 1
    reflection_coeff: float = 0.7
    snr_db: float = 15.0
    sample_rate: int = 16000
    duration_s: float = 2.0
    seed: int = 0
    min_separation_deg: float = 15.0
    t60_label_ms: float | None = None

    def __post_init__(self):
        room = np.asarray(self.room_dims, dtype=float)
        if room.shape != (3,) or np.any(room <= 0):
            raise InvalidSceneError(f"room_dims must be 3 positive lengths, got {self.room_dims}")
        if len(self.source_doas) < 1:
            raise InvalidSceneError("at least one source is required")
        if self.reflection_order < 0:
            raise InvalidSceneError("reflection_order must be >= 0")
        if self.duration_s <= 0 or self.sample_rate <= 0:
            raise InvalidSceneError("duration and sample rate must be positive")
        center = np.asarray(self.array_center, dtype=float)
        for pos in self.array.positions + center:
            _check_inside(room, pos, what="microphone")
        for pos in self.source_positions():
            _check_inside(room, pos, what="source")
        for i in range(len(self.source_doas)):
            for j in range(i + 1, len(self.source_doas)):
                sep = math.degrees(angular_distance(self.source_doas[i], self.source_doas[j]))
                if sep < self.min_separation_deg - 1e-9:
                    raise InvalidSceneError(
                        f"sources {i} and {j} separated by {sep:.2f} deg "
                        f"< minimum {self.min_separation_deg} deg"
                    )

    @property
    def n_sources(self):
        return len(self.source_doas)

    @property
    def n_samples(self):
        return int(round(self.duration_s * self.sample_rate))

    def source_positions(self):
        center = np.asarray(self.array_center, dtype=float)
        return [center + self.source_range * doa_unit_vector(d) for d in self.source_doas]


def _check_inside(room, pos, what="point", margin=1e-6):
    if np.any(pos <= margin) or np.any(pos >= room - margin):
        raise InvalidSceneError(f"{what} at {np.round(pos, 3)} lies outside room {tuple(room)}")


def sabine_t60(room_dims, absorption):
    """Approximate reverberation time (s) of a uniformly absorbing room."""
    room = np.asarray(room_dims, dtype=float)
    volume = float(np.prod(room))
    surface = 2.0 * float(room[0] * room[1] + room[0] * room[2] + room[1] * room[2])
    if not (0 < absorption <= 1):
        raise ValueError("absorption must be in (0, 1]")
    return 0.161 * volume / (surface * absorption)


def absorption_for_t60(room_dims, t60_s):
    """Inverse of sabine_t60; used only for labeling scenes."""
    room = np.asarray(room_dims, dtype=float)
    volume = float(np.prod(room))
    surface = 2.0 * float(room[0] * room[1] + room[0] * room[2] + room[1] * room[2])
    if t60_s <= 0:
        raise ValueError("t60 must be positive")
    return min(1.0, 0.161 * volume / (surface * t60_s))


def _axis_images(coord, length, order):
    """Per-axis image coordinates and reflection counts up to ``order``."""
    out = []
    n_max = order // 2 + 1
    for n in range(-n_max, n_max + 1):
        for p in (0, 1):
            count = abs(2 * n - p)
            if count <= order:
                out.append(((1 - 2 * p) * coord + 2 * n * length, count))
    return out


def simulate_rir(
    room_dims,
    source_pos,
    mic_pos,
    *,
    reflection_order,
    reflection_coeff=0.7,
    sample_rate,
    c=SPEED_OF_SOUND,
    max_len=1_000_000,
):
    """Image-source room impulse response for a rectangular room.

    Each image contributes a fractional-delay pulse (81-tap Hann-windowed
    sinc) with amplitude (coeff**n_reflections) / distance.
    """
    room = np.asarray(room_dims, dtype=float)
    src = np.asarray(source_pos, dtype=float)
    mic = np.asarray(mic_pos, dtype=float)
    if room.shape != (3,) or np.any(room <= 0):
        raise InvalidSceneError(f"room_dims must be 3 positive lengths, got {room_dims}")
    _check_inside(room, src, what="source")
    _check_inside(room, mic, what="microphone")
    if reflection_order < 0:
        raise InvalidSceneError("reflection_order must be >= 0")

    per_axis = [_axis_images(src[a], room[a], reflection_order) for a in range(3)]
    delays = []
    amps = []
    for x, cx in per_axis[0]:
        for y, cy in per_axis[1]:
            if cx + cy > reflection_order:
                continue
            for z, cz in per_axis[2]:
                total = cx + cy + cz
                if total > reflection_order:
                    continue
                d = math.dist((x, y, z), mic)
                if d < 1e-6:
                    raise InvalidSceneError("microphone coincides with an image source")
                delays.append(d / c * sample_rate)
                amps.append(reflection_coeff**total / d)

    length = int(math.ceil(max(delays))) + _SINC_HALF_WIDTH + 1
    if length > max_len:
        raise CapacityError(
            f"impulse response needs {length} samples, exceeding the cap of {max_len}"
        )
    h = np.zeros(length)
    for delay, amp in zip(delays, amps):
        n0 = max(0, int(math.ceil(delay - _SINC_HALF_WIDTH)))
        n1 = min(length - 1, int(math.floor(delay + _SINC_HALF_WIDTH)))
        t = np.arange(n0, n1 + 1) - delay
        window = 0.5 * (1.0 + np.cos(2.0 * np.pi * t / (2 * _SINC_HALF_WIDTH + 1)))
        h[n0 : n1 + 1] += amp * np.sinc(t) * window
    return h


def speech_like_excitation(n_samples, sample_rate, rng):
    """Pink-noise bursts gated by a random on/off activity envelope."""
    if n_samples <= 1:
        raise ShapeError("excitation needs more than one sample")
    white = rng.standard_normal(n_samples)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
    shaping = np.zeros_like(freqs)
    shaping[1:] = 1.0 / np.sqrt(freqs[1:])
    pink = np.fft.irfft(spec * shaping, n_samples)
    pink = pink / max(pink.std(), 1e-12)

    envelope = np.zeros(n_samples)
    pos = 0
    active = True  # always start voiced so the signal is never all-zero
    while pos < n_samples:
        if active:
            dur = int(rng.uniform(0.20, 0.60) * sample_rate)
            envelope[pos : pos + dur] = 1.0
        else:
            dur = int(rng.uniform(0.05, 0.25) * sample_rate)
        pos += max(dur, 1)
        active = not active
    ramp = int(0.010 * sample_rate)
    if ramp > 1:
        kernel = np.hanning(2 * ramp + 1)
        envelope = np.convolve(envelope, kernel / kernel.sum(), mode="same")
    return pink * envelope


def synthesize_scene(spec, source_signals):
    """Render the clean multichannel mixture for a scene.

    ``source_signals`` is a list of 1-D arrays, one per source. The output is
    the superposition of every source convolved with its per-mic impulse
    response, truncated to the scene duration.
    """
    if len(source_signals) != spec.n_sources:
        raise ShapeError(
            f"{spec.n_sources} sources declared but {len(source_signals)} signals supplied"
        )
    n_target = spec.n_samples
    lengths = {len(s) for s in source_signals}
    if len(lengths) != 1:
        raise ShapeError("source signals must share a common length")
    mics_abs = np.asarray(spec.array_center, dtype=float) + spec.array.positions
    m = spec.array.n_mics
    renders = np.zeros((spec.n_sources, m, n_target))
    for k, (pos, sig) in enumerate(zip(spec.source_positions(), source_signals)):
        for i in range(m):
            h = simulate_rir(
                spec.room_dims,
                pos,
                mics_abs[i],
                reflection_order=spec.reflection_order,
                reflection_coeff=spec.reflection_coeff,
                sample_rate=spec.sample_rate,
            )
            y = fftconvolve(np.asarray(sig, dtype=float), h)[:n_target]
            renders[k, i, : y.shape[0]] = y
    return MultichannelSignal(renders.sum(axis=0), spec.sample_rate)


def add_noise(signal, snr_db, rng):
    """Add white Gaussian noise at the requested SNR (dB).

    The noise power is set against the mean per-channel power of the clean
    signal. ``snr_db = inf`` returns the input unchanged. ``rng`` may be a
    Generator or an integer seed.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if math.isinf(snr_db) and snr_db > 0:
        return MultichannelSignal(signal.samples.copy(), signal.sample_rate)
    p_signal = float(np.mean(signal.samples**2))
    if p_signal <= 0.0:
        raise UndefinedSnrError("clean signal has zero power; SNR is undefined")
    p_noise = p_signal / (10.0 ** (snr_db / 10.0))
    noise = rng.standard_normal(signal.samples.shape) * math.sqrt(p_noise)
    return MultichannelSignal(signal.samples + noise, signal.sample_rate)


def render_scene(spec):
    """Simulate a scene end to end from its seed; returns (signal, manifest)."""
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(spec.n_sources + 1)
    signals = [
        speech_like_excitation(spec.n_samples, spec.sample_rate, np.random.default_rng(children[k]))
        for k in range(spec.n_sources)
    ]
    clean = synthesize_scene(spec, signals)
    noisy = add_noise(clean, spec.snr_db, np.random.default_rng(children[-1]))
    manifest = {
        "seed": spec.seed,
        "n_sources": spec.n_sources,
        "source_doas_deg": [
            {"elevation_deg": d.elevation_deg, "azimuth_deg": d.azimuth_deg}
            for d in spec.source_doas
        ],
        "source_range_m": spec.source_range,
        "room_dims_m": [float(x) for x in np.asarray(spec.room_dims, dtype=float)],
        "reflection_order": spec.reflection_order,
        "reflection_coeff": spec.reflection_coeff,
        "t60_label_ms": spec.t60_label_ms,
        "snr_db": spec.snr_db if not math.isinf(spec.snr_db) else "inf",
        "sample_rate": spec.sample_rate,
        "duration_s": spec.duration_s,
    }
    return noisy, manifest


# ---------------------------------------------------------------------------
# external formats


def scene_spec_to_dict(spec):
    return {
        "room_dims_m": [float(x) for x in np.asarray(spec.room_dims, dtype=float)],
        "mic_positions_m": spec.array.positions.tolist(),
        "array_center_m": [float(x) for x in np.asarray(spec.array_center, dtype=float)],
        "sources": [
            {"elevation_deg": d.elevation_deg, "azimuth_deg": d.azimuth_deg}
            for d in spec.source_doas
        ],
        "source_range_m": spec.source_range,
        "reflection_order": spec.reflection_order,
        "reflection_coeff": spec.reflection_coeff,
        "snr_db": "inf" if math.isinf(spec.snr_db) else spec.snr_db,
        "sample_rate": spec.sample_rate,
        "duration_s": spec.duration_s,
        "seed": spec.seed,
        "min_separation_deg": spec.min_separation_deg,
        "t60_label_ms": spec.t60_label_ms,
    }


def scene_spec_from_dict(data):
    snr = data["snr_db"]
    return SceneSpec(
        room_dims=tuple(data["room_dims_m"]),
        array=MicArray(np.asarray(data["mic_positions_m"], dtype=float)),
        array_center=tuple(data["array_center_m"]),
        source_doas=[
            Doa.from_degrees(s["elevation_deg"], s["azimuth_deg"]) for s in data["sources"]
        ],
        source_range=data["source_range_m"],
        reflection_order=data["reflection_order"],
        reflection_coeff=data["reflection_coeff"],
        snr_db=math.inf if snr == "inf" else float(snr),
        sample_rate=data["sample_rate"],
        duration_s=data["duration_s"],
        seed=data["seed"],
        min_separation_deg=data["min_separation_deg"],
        t60_label_ms=data["t60_label_ms"],
    )


def save_scene_spec(path, spec):
    with open(path, "w") as fh:
        json.dump(scene_spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scene_spec(path):
    with open(path) as fh:
        return scene_spec_from_dict(json.load(fh))


def write_wav(path, signal, gain=None):
    """Write a 16-bit PCM multichannel WAV; returns the scaling gain used."""
    peak = float(np.max(np.abs(signal.samples)))
    if gain is None:
        if peak <= 0:
            raise UndefinedSnrError("cannot scale an all-zero signal for WAV export")
        gain = 0.9 * 32767.0 / peak
    data = np.round(signal.samples.T * gain)
    if np.any(np.abs(data) > 32767):
        raise CapacityError("scaled samples exceed the 16-bit range")
    wavfile.write(path, int(signal.sample_rate), data.astype(np.int16))
    return gain


def read_wav(path, gain):
    """Read a WAV written by write_wav, undoing the recorded gain."""
    rate, data = wavfile.read(path)
    if data.ndim == 1:
        data = data[:, None]
    return MultichannelSignal(data.T.astype(float) / gain, float(rate))
