"""Smooth-motion synthetic sequences with exact ground-truth flow.

Scenes are global translations of a band-limited random texture, the
smooth-motion regime that makes stack-transition artifacts visible (and
that stabilized footage exhibits).  Sub-pixel velocities are first-class.

Rendering runs backwards: the last frame is a plain crop of the texture
and every earlier frame is the bilinear resample of its successor at the
scene velocity.  This makes ``warp(frame[t+1], ground-truth flow)``
reproduce ``frame[t]`` exactly (to float round-off) instead of only up to
bilinear resampling error, so the clean-scene TC oracle is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, DataError
from .metrics import FlowField
from .video_io import Frame, Sequence


class FootprintExceedsTexture(DataError):
    """The motion footprint of the scene does not fit inside the texture."""


@dataclass(frozen=True)
class SceneSpec:
    """Global-translation scene parameters."""

    width: int
    height: int
    length: int
    velocity: tuple[float, float] = (0.0, 0.0)  # (vx, vy) pixels/frame
    texture_seed: int = 0
    texture_scale: float = 4.0
    channels: int = 1

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"scene dims must be >= 1, got {self.width}x{self.height}")
        if self.length < 2:
            raise ConfigError(f"scene length must be >= 2, got {self.length}")
        if self.texture_scale < 1:
            raise ConfigError(f"texture_scale must be >= 1, got {self.texture_scale}")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Clean rendered sequence plus the exact frame-to-frame flows."""

    clean: Sequence
    flows: tuple[FlowField, ...]  # flows[t] maps frame t+1 onto frame t


def make_texture(
    seed: int, big_width: int, big_height: int, scale: float, channels: int = 1
) -> Frame:
    """Band-limited random texture: blurred white noise, mean 128, std 40.

    The correlation length is set by ``scale`` (Gaussian blur std in
    pixels); each channel is rescaled exactly to mean 128 / std 40.
    """
    rng = np.random.default_rng(seed)
    planes = np.empty((channels, big_height, big_width))
    for c in range(channels):
        noise = rng.standard_normal((big_height, big_width))
        blurred = gaussian_filter(noise, sigma=scale, mode="reflect")
        std = blurred.std()
        if std == 0.0:
            raise DataError("degenerate texture (zero variance)")
        planes[c] = (blurred - blurred.mean()) / std * 40.0 + 128.0
    return Frame(planes)


def _bilinear_shift(plane: np.ndarray, vx: float, vy: float) -> np.ndarray:
    """Sample plane at (y + vy, x + vx); callers guarantee in-bounds use."""
    h, w = plane.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    px = np.clip(xx + vx, 0.0, w - 1.0)
    py = np.clip(yy + vy, 0.0, h - 1.0)
    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = px - x0
    fy = py - y0
    top = (1.0 - fx) * plane[y0, x0] + fx * plane[y0, x1]
    bot = (1.0 - fx) * plane[y1, x0] + fx * plane[y1, x1]
    return (1.0 - fy) * top + fy * bot


def _margins(v: float, steps: int) -> tuple[int, int]:
    """(low, high) texture margin needed for a velocity component."""
    lo = math.ceil(max(0.0, -v * steps)) + 1
    hi = math.ceil(max(0.0, v * steps)) + 1
    return lo, hi


def render_translating(spec: SceneSpec, texture: Frame | None = None) -> GroundTruth:
    """Render a translating scene and its constant ground-truth flow.

    Content moves by ``velocity`` pixels per frame; the flow from frame t
    to t+1 is the constant field (vx, vy) with an all-true mask.
    """
    vx, vy = spec.velocity
    steps = spec.length - 1
    lo_x, hi_x = _margins(vx, steps)
    lo_y, hi_y = _margins(vy, steps)
    big_w = spec.width + lo_x + hi_x
    big_h = spec.height + lo_y + hi_y
    if texture is None:
        texture = make_texture(
            spec.texture_seed, big_w, big_h, spec.texture_scale, spec.channels
        )
    elif texture.width < big_w or texture.height < big_h:
        raise FootprintExceedsTexture(
            f"texture {texture.height}x{texture.width} is smaller than the "
            f"required footprint {big_h}x{big_w}"
        )
    elif texture.channels != spec.channels:
        raise ConfigError(
            f"texture has {texture.channels} channels, scene wants {spec.channels}"
        )

    crops = [None] * spec.length
    planes = [texture.plane(c).copy() for c in range(spec.channels)]
    for t in range(spec.length - 1, -1, -1):
        crop = np.stack(
            [p[lo_y : lo_y + spec.height, lo_x : lo_x + spec.width] for p in planes]
        )
        crops[t] = Frame(crop)
        if t > 0:
            planes = [_bilinear_shift(p, vx, vy) for p in planes]

    flows = tuple(
        FlowField.constant(spec.width, spec.height, vx, vy) for _ in range(steps)
    )
    return GroundTruth(clean=Sequence(tuple(crops)), flows=flows)
