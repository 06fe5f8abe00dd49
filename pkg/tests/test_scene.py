"""Room simulation: geometry, image-source responses, rendering, noise."""
from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doarisk.errors import (
    CapacityError,
    InvalidSceneError,
    ShapeError,
    UndefinedSnrError,
)
from doarisk.scene import (
    Doa,
    MicArray,
    SceneSpec,
    add_noise,
    absorption_for_t60,
    angular_distance,
    doa_unit_vector,
    pseudo_spherical_array,
    read_wav,
    render_scene,
    sabine_t60,
    scene_spec_from_dict,
    scene_spec_to_dict,
    simulate_rir,
    speech_like_excitation,
    synthesize_scene,
    write_wav,
)
from doarisk.srp import expected_tdoa

from .oracles import windowed_sinc_kernel

FS = 16000.0
C = 343.0


# ---------------------------------------------------------------------------
# directions


def test_unit_vector_poles_and_axes():
    assert np.allclose(doa_unit_vector(Doa(0.0, 1.2)), [0, 0, 1])
    assert np.allclose(doa_unit_vector(Doa(math.pi / 2, 0.0)), [1, 0, 0])
    assert np.allclose(doa_unit_vector(Doa(math.pi / 2, math.pi / 2)), [0, 1, 0])


def test_doa_validation():
    with pytest.raises(ValueError):
        Doa(-0.2, 0.0)
    with pytest.raises(ValueError):
        Doa(0.5, 4.0)
    d = Doa.from_degrees(90, -180)
    assert d.elevation == pytest.approx(math.pi / 2)


@given(
    st.floats(0.0, math.pi),
    st.floats(-math.pi, math.pi),
    st.floats(0.0, math.pi),
    st.floats(-math.pi, math.pi),
)
def test_angular_distance_symmetric(el1, az1, el2, az2):
    a, b = Doa(el1, az1), Doa(el2, az2)
    d_ab = angular_distance(a, b)
    assert d_ab == pytest.approx(angular_distance(b, a), abs=1e-12)
    assert 0.0 <= d_ab <= math.pi + 1e-12
    assert angular_distance(a, a) == pytest.approx(0.0, abs=1e-7)


def test_pseudo_spherical_array_geometry():
    arr = pseudo_spherical_array(12, radius=0.1)
    assert arr.positions.shape == (12, 3)
    radii = np.linalg.norm(arr.positions, axis=1)
    assert np.allclose(radii, 0.1)
    # all mics distinct
    d = np.linalg.norm(arr.positions[:, None] - arr.positions[None, :], axis=-1)
    assert d[~np.eye(12, dtype=bool)].min() > 1e-3
    arr8 = pseudo_spherical_array(8, radius=0.25)
    assert arr8.positions.shape == (8, 3)
    assert np.allclose(np.linalg.norm(arr8.positions, axis=1), 0.25)


def test_mic_array_rejects_duplicates():
    with pytest.raises(ShapeError):
        MicArray(np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# image-source responses


def test_rir_order0_is_a_single_windowed_sinc():
    """1 m of direct path: one unit-amplitude pulse at fs*d/c samples."""
    h = simulate_rir(
        (10, 10, 10), (5, 5, 5), (6, 5, 5), reflection_order=0, sample_rate=FS
    )
    delay = FS * 1.0 / C  # ~46.65 samples
    expected = windowed_sinc_kernel(delay, len(h))
    assert np.allclose(h, expected, atol=1e-12)
    assert np.argmax(np.abs(h)) == round(delay)


def test_rir_inverse_distance_scaling():
    h2 = simulate_rir(
        (10, 10, 10), (5, 5, 5), (7, 5, 5), reflection_order=0, sample_rate=FS
    )
    expected = windowed_sinc_kernel(FS * 2.0 / C, len(h2)) / 2.0
    assert np.allclose(h2, expected, atol=1e-12)


def test_rir_order1_matches_hand_enumerated_images():
    """4x5x3 room: direct path plus exactly six single-bounce mirrors."""
    room = (4.0, 5.0, 3.0)
    src = np.array([1.0, 1.0, 1.0])
    mic = np.array([3.0, 4.0, 1.5])
    h = simulate_rir(room, src, mic, reflection_order=1, reflection_coeff=0.7, sample_rate=FS)

    images = [(src, 0)]
    for axis, length in enumerate(room):
        for wall in (0.0, length):
            img = src.copy()
            img[axis] = 2.0 * wall - src[axis]
            images.append((img, 1))
    assert len(images) == 7

    expected = np.zeros_like(h)
    for pos, bounces in images:
        dist = float(np.linalg.norm(pos - mic))
        expected += 0.7**bounces / dist * windowed_sinc_kernel(FS * dist / C, len(h))
    assert np.allclose(h, expected, atol=1e-12)


def test_rir_capacity_cap():
    with pytest.raises(CapacityError):
        simulate_rir(
            (50, 50, 50),
            (1, 1, 1),
            (49, 49, 49),
            reflection_order=0,
            sample_rate=FS,
            max_len=100,
        )


def test_rir_rejects_outside_positions():
    with pytest.raises(InvalidSceneError):
        simulate_rir((4, 4, 3), (5, 1, 1), (1, 1, 1), reflection_order=0, sample_rate=FS)


def test_tdoa_consistency_order0():
    """Cross-correlation lag equals geometric TDOA to the nearest sample."""
    rng = np.random.default_rng(9)
    burst = rng.standard_normal(512)
    hits = 0
    for _ in range(100):
        src = rng.uniform(1.0, 7.0, size=3)
        mic_a = rng.uniform(1.0, 7.0, size=3)
        mic_b = rng.uniform(1.0, 7.0, size=3)
        if np.linalg.norm(mic_a - mic_b) < 0.2:
            continue
        room = (8.0, 8.0, 8.0)
        ha = simulate_rir(room, src, mic_a, reflection_order=0, sample_rate=FS)
        hb = simulate_rir(room, src, mic_b, reflection_order=0, sample_rate=FS)
        xa = np.convolve(burst, ha)
        xb = np.convolve(burst, hb)
        n = max(len(xa), len(xb))
        xa = np.pad(xa, (0, n - len(xa)))
        xb = np.pad(xb, (0, n - len(xb)))
        corr = np.correlate(xa, xb, mode="full")
        lag = int(np.argmax(corr)) - (n - 1)
        # exact TDOA for a point source (near field): difference of path lengths
        tdoa = (np.linalg.norm(src - mic_a) - np.linalg.norm(src - mic_b)) / C
        assert abs(lag - tdoa * FS) <= 1.0
        hits += 1
    assert hits >= 90


# ---------------------------------------------------------------------------
# scene assembly


def _spec(doas, seed=0, order=0, snr=math.inf, duration=0.25):
    return SceneSpec(
        room_dims=(6.0, 6.0, 2.5),
        array=pseudo_spherical_array(8, radius=0.1),
        array_center=(3.0, 3.0, 1.2),
        source_doas=doas,
        source_range=1.5,
        reflection_order=order,
        snr_db=snr,
        sample_rate=FS,
        duration_s=duration,
        seed=seed,
    )


def test_synthesize_scene_superposition():
    rng = np.random.default_rng(3)
    s1 = rng.standard_normal(2000)
    s2 = rng.standard_normal(2000)
    d1 = Doa.from_degrees(90, 0)
    d2 = Doa.from_degrees(90, 120)
    both = synthesize_scene(_spec([d1, d2]), [s1, s2])
    only1 = synthesize_scene(_spec([d1]), [s1])
    only2 = synthesize_scene(_spec([d2]), [s2])
    ref = np.abs(both.samples).max()
    assert np.allclose(
        both.samples, only1.samples + only2.samples, atol=1e-9 * ref
    )
    assert both.sample_rate == FS


def test_scene_spec_rejects_sources_outside_room():
    # range long enough to push the source through a wall
    with pytest.raises(InvalidSceneError):
        spec = _spec([Doa.from_degrees(90, 0)])
        SceneSpec(
            room_dims=spec.room_dims,
            array=spec.array,
            array_center=spec.array_center,
            source_doas=spec.source_doas,
            source_range=5.0,
            sample_rate=FS,
            seed=0,
        )


def test_scene_spec_rejects_close_sources():
    with pytest.raises(InvalidSceneError):
        _spec([Doa.from_degrees(90, 0), Doa.from_degrees(90, 5)])


def test_render_scene_deterministic():
    spec = _spec([Doa.from_degrees(80, 30)], seed=77, snr=10.0)
    sig1, man1 = render_scene(spec)
    sig2, man2 = render_scene(spec)
    assert np.array_equal(sig1.samples, sig2.samples)
    assert man1 == man2
    assert man1["n_sources"] == 1
    assert man1["source_doas_deg"][0]["elevation_deg"] == pytest.approx(80.0)


def test_render_scene_changes_with_seed():
    a, _ = render_scene(_spec([Doa.from_degrees(80, 30)], seed=1))
    b, _ = render_scene(_spec([Doa.from_degrees(80, 30)], seed=2))
    assert not np.array_equal(a.samples, b.samples)


# ---------------------------------------------------------------------------
# excitation and noise


def test_speech_like_excitation_is_seeded_and_active():
    x1 = speech_like_excitation(8000, FS, np.random.default_rng(5))
    x2 = speech_like_excitation(8000, FS, np.random.default_rng(5))
    x3 = speech_like_excitation(8000, FS, np.random.default_rng(6))
    assert np.array_equal(x1, x2)
    assert not np.array_equal(x1, x3)
    assert x1.shape == (8000,)
    assert x1.std() > 0.0
    # starts voiced: early samples carry energy
    assert np.abs(x1[: int(0.2 * FS)]).max() > 0.0


def test_add_noise_zero_db_power_match():
    rng = np.random.default_rng(11)
    sig = synthesize_scene(_spec([Doa.from_degrees(90, 0)], duration=1.0),
                           [rng.standard_normal(16000)])
    noisy = add_noise(sig, 0.0, np.random.default_rng(12))
    noise = noisy.samples - sig.samples
    p_sig = np.mean(sig.samples**2)
    p_noise = np.mean(noise**2)
    assert abs(p_noise / p_sig - 1.0) < 0.05


def test_add_noise_clean_sentinel_and_errors():
    rng = np.random.default_rng(13)
    sig = synthesize_scene(_spec([Doa.from_degrees(90, 0)]), [rng.standard_normal(4000)])
    clean = add_noise(sig, math.inf, np.random.default_rng(0))
    assert np.array_equal(clean.samples, sig.samples)
    silent = synthesize_scene(_spec([Doa.from_degrees(90, 0)]), [np.zeros(4000)])
    with pytest.raises(UndefinedSnrError):
        add_noise(silent, 10.0, np.random.default_rng(0))


def test_add_noise_deterministic():
    rng = np.random.default_rng(14)
    sig = synthesize_scene(_spec([Doa.from_degrees(90, 0)]), [rng.standard_normal(4000)])
    a = add_noise(sig, 5.0, np.random.default_rng(21))
    b = add_noise(sig, 5.0, np.random.default_rng(21))
    assert np.array_equal(a.samples, b.samples)


# ---------------------------------------------------------------------------
# persistence


def test_scene_spec_json_roundtrip(tmp_path):
    spec = _spec([Doa.from_degrees(75, -45), Doa.from_degrees(100, 60)], seed=4, order=1, snr=12.0)
    d = scene_spec_to_dict(spec)
    json.dumps(d)  # must be serializable as-is
    back = scene_spec_from_dict(d)
    assert back.room_dims == spec.room_dims
    assert back.seed == spec.seed
    assert back.snr_db == spec.snr_db
    assert len(back.source_doas) == 2
    assert angular_distance(back.source_doas[0], spec.source_doas[0]) < 1e-9
    sig_a, _ = render_scene(spec)
    sig_b, _ = render_scene(back)
    assert np.array_equal(sig_a.samples, sig_b.samples)


def test_scene_spec_infinite_snr_serializes(tmp_path):
    spec = _spec([Doa.from_degrees(90, 0)], snr=math.inf)
    d = scene_spec_to_dict(spec)
    text = json.dumps(d)
    assert "Infinity" not in text
    back = scene_spec_from_dict(json.loads(text))
    assert math.isinf(back.snr_db)


def test_wav_roundtrip(tmp_path):
    spec = _spec([Doa.from_degrees(85, 10)], seed=9, snr=20.0)
    sig, _ = render_scene(spec)
    path = tmp_path / "x.wav"
    gain = write_wav(path, sig)
    back = read_wav(path, gain)
    assert back.samples.shape == sig.samples.shape
    peak = np.abs(sig.samples).max()
    assert np.abs(back.samples - sig.samples).max() <= peak / 32767 * 1.2
    # same signal twice -> identical bytes
    path2 = tmp_path / "y.wav"
    write_wav(path2, sig)
    assert path.read_bytes() == path2.read_bytes()


def test_sabine_mapping_inverts():
    t60 = sabine_t60((6.0, 6.0, 2.5), 0.35)
    assert t60 > 0
    assert absorption_for_t60((6.0, 6.0, 2.5), t60) == pytest.approx(0.35, rel=1e-9)


def test_expected_tdoa_hand_values():
    a = np.array([0.05, 0.0, 0.0])
    b = np.array([-0.05, 0.0, 0.0])
    on_axis = Doa(math.pi / 2, 0.0)
    assert expected_tdoa(a, b, on_axis) == pytest.approx(0.1 / C, rel=1e-12)
    assert expected_tdoa(a, a, on_axis) == 0.0
    broadside = Doa(math.pi / 2, math.pi / 2)
    assert expected_tdoa(a, b, broadside) == pytest.approx(0.0, abs=1e-15)
