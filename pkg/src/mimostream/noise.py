"""Seeded additive white Gaussian noise with coordinate-addressed draws.

The Gaussian draw for a sample is a pure function of
(seed, frame index, channel, row, col): a counter-mode integer hash
(splitmix64 finalizer) produces two uniforms that feed a Box-Muller
transform.  Results are therefore identical no matter how the pixels are
iterated or how many workers run.  Noisy samples are NOT clamped, so the
degradation stays exactly Gaussian and matches the analytic PSNR and
warping-error oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .video_io import Frame, Sequence


class NonPositiveSigma(ConfigError):
    """Analytic PSNR needs sigma > 0."""


@dataclass(frozen=True)
class NoiseSpec:
    """Noise standard deviation on the [0, 255] scale plus a 64-bit seed."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma >= 0.0):
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")


_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
# distinct odd multipliers decorrelate the coordinate axes before mixing
_T_SALT = np.uint64(0x9E3779B97F4A7C15)
_C_SALT = np.uint64(0xC2B2AE3D27D4EB4F)
_Y_SALT = np.uint64(0xD6E8FEB86659FD93)
_X_SALT = np.uint64(0xA5CB3B1EDD2C2ACB)
_U1_SALT = np.uint64(0x165667B19E3779F9)
_U2_SALT = np.uint64(0x27D4EB2F165667C5)


def _mix(x):
    """splitmix64 finalizer, elementwise on uint64 scalars or arrays."""
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def derive_seed(seed: int, stream: int) -> int:
    """Stable sub-seed for independent noise streams (e.g. per sigma)."""
    h = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ (np.uint64(stream) * _T_SALT))
    return int(_mix(h))


def _uniform_open_closed(h: np.ndarray) -> np.ndarray:
    # 53-bit mantissa; +1 keeps the value in (0, 1] so log() stays finite
    return ((h >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)


def _uniform_halfopen(h: np.ndarray) -> np.ndarray:
    return (h >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def standard_normal_plane(seed: int, t: int, c: int, height: int, width: int) -> np.ndarray:
    """N(0,1) draws addressed by (seed, t, c, row, col), shape (height, width)."""
    base = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    base = _mix(base ^ (np.uint64(t) * _T_SALT))
    base = _mix(base ^ (np.uint64(c) * _C_SALT))
    rows = np.arange(height, dtype=np.uint64)[:, np.newaxis]
    cols = np.arange(width, dtype=np.uint64)[np.newaxis, :]
    h = _mix(base ^ (rows * _Y_SALT))
    h = _mix(h ^ (cols * _X_SALT))
    u1 = _uniform_open_closed(_mix(h ^ _U1_SALT))
    u2 = _uniform_halfopen(_mix(h ^ _U2_SALT))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def add_awgn(seq: Sequence, spec: NoiseSpec) -> Sequence:
    """Add independent N(0, sigma^2) noise to every sample, unclamped."""
    if spec.sigma == 0.0:
        return seq.with_frames(seq.frames)
    noisy = []
    for t, frame in enumerate(seq.frames):
        planes = np.empty_like(frame.data)
        for c in range(frame.channels):
            draw = standard_normal_plane(spec.seed, t, c, frame.height, frame.width)
            planes[c] = frame.data[c] + spec.sigma * draw
        noisy.append(Frame(planes))
    return seq.with_frames(noisy)


def expected_noisy_psnr(sigma: float) -> float:
    """Analytic PSNR of unclamped AWGN against the clean signal: 20*log10(255/sigma)."""
    if sigma <= 0.0:
        raise NonPositiveSigma(f"sigma must be > 0, got {sigma}")
    return 20.0 * math.log10(255.0 / sigma)
