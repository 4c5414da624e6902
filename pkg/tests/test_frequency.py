import numpy as np
import pytest

from conftest import textured_image
from poseflow.errors import DimensionMismatch
from poseflow.frequency import AugmentConfig, Spectrum, augment, decompose, mix_amplitude, recompose


def naive_idft2(F):
    """Direct double sum, independent of numpy.fft."""
    H, W = F.shape
    m = np.arange(H)[:, None]
    n = np.arange(W)[None, :]
    out = np.zeros((H, W), dtype=complex)
    for k in range(H):
        for l in range(W):
            out += F[k, l] * np.exp(2j * np.pi * (k * m / H + l * n / W))
    return out / (H * W)


def phase_diff(a, b):
    return np.abs(np.angle(np.exp(1j * (a - b))))


def test_constant_image_is_dc_only():
    c, H, W = 0.3, 16, 12
    s = decompose(np.full((H, W, 3), c))
    assert s.amplitude[0, 0] == pytest.approx([c * H * W] * 3)
    rest = s.amplitude.copy()
    rest[0, 0] = 0
    assert rest.max() < 1e-6
    np.testing.assert_array_equal(s.phase[0, 0], 0.0)


def test_round_trip(rng):
    for shape in [(32, 32, 3), (17, 23), (8, 40, 1)]:
        x = rng.uniform(size=shape)
        y = recompose(decompose(x))
        assert y.shape == x.shape
        assert np.abs(y - x).max() < 1e-6


def test_amplitude_shift_invariant(rng):
    x = rng.uniform(size=(32, 32, 3))
    a = decompose(x).amplitude
    b = decompose(np.roll(x, (5, -3), axis=(0, 1))).amplitude
    assert np.abs(a - b).max() < 1e-6


def test_amplitude_non_negative_phase_range(rng):
    s = decompose(rng.uniform(size=(16, 16, 3)))
    assert s.amplitude.min() >= 0
    assert s.phase.min() >= -np.pi and s.phase.max() <= np.pi


def test_flat_spectrum_is_impulse():
    H, W = 8, 6
    amp = np.ones((H, W, 1))
    x = recompose(Spectrum(amp, np.zeros_like(amp)), clamp=False)[..., 0]
    oracle = naive_idft2(np.ones((H, W)))
    np.testing.assert_allclose(x, oracle.real, atol=1e-12)
    assert x[0, 0] == pytest.approx(1.0)
    x[0, 0] = 0
    assert np.abs(x).max() < 1e-12


def test_recompose_matches_naive_idft(rng):
    F_amp = rng.uniform(size=(6, 5, 1))
    phase = rng.uniform(-np.pi, np.pi, size=(6, 5, 1))
    x = recompose(Spectrum(F_amp, phase), clamp=False)[..., 0]
    np.testing.assert_allclose(x, naive_idft2((F_amp * np.exp(1j * phase))[..., 0]).real, atol=1e-12)


def test_zero_amplitude_gives_black():
    z = np.zeros((8, 8, 3))
    assert np.all(recompose(Spectrum(z, np.ones_like(z))) == 0)


def test_mix_amplitude_endpoints(rng):
    a = decompose(rng.uniform(size=(16, 16, 3)))
    b = decompose(rng.uniform(size=(16, 16, 3)))
    np.testing.assert_array_equal(mix_amplitude(a, b, 0.0), a.amplitude)
    np.testing.assert_array_equal(mix_amplitude(a, b, 1.0), b.amplitude)
    np.testing.assert_allclose(mix_amplitude(a, b, 0.5), (a.amplitude + b.amplitude) / 2, rtol=1e-15)
    with pytest.raises(DimensionMismatch):
        mix_amplitude(a, decompose(rng.uniform(size=(8, 16, 3))), 0.5)


def test_augment_alpha_zero_reproduces_source(rng):
    xs, xr = textured_image(rng), rng.uniform(size=(64, 64, 3))
    out = augment(xs, xr, AugmentConfig(), np.random.default_rng(0), alpha=0.0, dropout=False)
    assert np.abs(out - xs).max() < 1e-5


def test_augment_alpha_one_has_target_amplitude(rng):
    xs, xr = textured_image(rng), textured_image(rng)
    out = augment(xs, xr, AugmentConfig(), np.random.default_rng(0), alpha=1.0, dropout=False, clamp=False)
    a_out, a_tgt = decompose(out).amplitude, decompose(xr).amplitude
    assert (np.abs(a_out - a_tgt) / np.maximum(a_tgt, 1e-12)).max() < 1e-4


def test_augment_dropout_is_phase_only(rng):
    xs, xr = textured_image(rng), textured_image(rng)
    out = augment(xs, xr, AugmentConfig(), np.random.default_rng(0), dropout=True, clamp=False)
    src = decompose(xs)
    expected = recompose(Spectrum(np.ones_like(src.amplitude), src.phase), clamp=False)
    np.testing.assert_allclose(out, expected, atol=1e-12)
    assert np.abs(decompose(out).amplitude - 1.0).max() < 1e-5


def test_augment_mix_preserves_phase(rng):
    xs, xr = textured_image(rng), textured_image(rng)
    for alpha in (0.2, 0.7):
        out = augment(xs, xr, AugmentConfig(), np.random.default_rng(1), alpha=alpha, dropout=False, clamp=False)
        s_out, s_src = decompose(out), decompose(xs)
        live = s_out.amplitude > 1e-8
        assert phase_diff(s_out.phase, s_src.phase)[live].max() < 1e-4


def test_augment_deterministic_and_shape(rng):
    xs, xr = textured_image(rng), rng.uniform(size=(40, 50, 3))
    cfg = AugmentConfig(beta=1.0, delta0=0.5)
    a = augment(xs, xr, cfg, np.random.default_rng(7))
    b = augment(xs, xr, cfg, np.random.default_rng(7))
    assert a.tobytes() == b.tobytes()
    assert a.shape == xs.shape
    assert a.min() >= 0 and a.max() <= 1
    gray = augment(xs[..., 0], xr, cfg, np.random.default_rng(7))
    assert gray.shape == xs.shape[:2]


def test_augment_branch_rate_follows_delta0(rng):
    xs, xr = textured_image(rng, 16, 16), textured_image(rng, 16, 16)
    cfg = AugmentConfig(beta=1.0, delta0=0.3)
    flat = 0
    n = 400
    for k in range(n):
        out = augment(xs, xr, cfg, np.random.default_rng(k), clamp=False)
        flat += np.abs(decompose(out).amplitude - 1).max() < 1e-6
    # dropout happens when delta >= delta0, i.e. with probability 0.7
    assert abs(flat / n - 0.7) < 0.07


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(beta=0)
    with pytest.raises(ValueError):
        AugmentConfig(delta0=1.0)
