"""Amplitude/phase Fourier augmentation.

Images are float arrays in ``[0, 1]`` shaped ``(H, W)`` or ``(H, W, C)``.
The forward DFT is unnormalized and the inverse carries the ``1/(H*W)``
factor (numpy's default). Spectra keep raw DFT index order, no centering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch


@dataclass(frozen=True)
class AugmentConfig:
    beta: float = 1.0
    delta0: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 < self.delta0 < 1:
            raise ValueError(f"delta0 must lie in (0, 1), got {self.delta0}")


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Per-channel amplitude and phase, each shaped ``(H, W, C)``."""

    amplitude: np.ndarray
    phase: np.ndarray
    gray: bool = False

    @property
    def shape(self):
        return self.amplitude.shape


def _as_hwc(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[..., None], True
    if x.ndim == 3 and x.shape[2] in (1, 3):
        return x, False
    raise DimensionMismatch(f"expected (H, W) or (H, W, 1|3) image, got shape {x.shape}")


def decompose(x) -> Spectrum:
    x, gray = _as_hwc(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    F = np.fft.fft2(x, axes=(0, 1))
    return Spectrum(np.abs(F), np.angle(F), gray)


def recompose(s: Spectrum, clamp=True):
    """Inverse DFT of ``amplitude * exp(1j * phase)``; imaginary part dropped."""
    F = s.amplitude * np.exp(1j * s.phase)
    x = np.real(np.fft.ifft2(F, axes=(0, 1)))
    if clamp:
        x = np.clip(x, 0.0, 1.0)
    return x[..., 0] if s.gray else x


def mix_amplitude(src: Spectrum, tgt: Spectrum, alpha: float):
    if src.amplitude.shape != tgt.amplitude.shape:
        raise DimensionMismatch(f"spectrum shapes differ: {src.amplitude.shape} vs {tgt.amplitude.shape}")
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    return (1.0 - alpha) * src.amplitude + alpha * tgt.amplitude


def resize_bilinear(x, height, width):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[:2] == (height, width):
        return x
    zoom = (height / x.shape[0], width / x.shape[1]) + (1,) * (x.ndim - 2)
    return ndimage.zoom(x, zoom, order=1, mode="nearest", grid_mode=True)


def augment(x_s, x_r, cfg: AugmentConfig, rng, alpha=None, dropout=None, clamp=True):
    """Mix the source amplitude with a style image's, or drop it, keeping the source phase.

    ``rng`` is a ``numpy.random.Generator``; one draw for the branch and one
    for the mix strength are always consumed so the stream stays aligned.
    ``alpha`` and ``dropout`` override the random draws when given.
    """
    xs, gray = _as_hwc(x_s)
    xr, _ = _as_hwc(x_r)
    xr = resize_bilinear(xr, xs.shape[0], xs.shape[1])
    if xr.shape[2] != xs.shape[2]:
        if xr.shape[2] == 1:
            xr = np.repeat(xr, xs.shape[2], axis=2)
        else:
            xr = xr.mean(axis=2, keepdims=True)

    delta = rng.uniform(0.0, 1.0)
    a = rng.uniform(0.0, cfg.beta)
    if dropout is None:
        dropout = not delta < cfg.delta0
    if alpha is not None:
        a = alpha

    src = decompose(xs)
    if dropout:
        amp = np.ones_like(src.amplitude)
    else:
        amp = mix_amplitude(src, decompose(xr), a)
    out = recompose(Spectrum(amp, src.phase), clamp=clamp)
    return out[..., 0] if gray else out
