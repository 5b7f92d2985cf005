"""Dense optical flow, warping, and the per-frame quality metrics.

The temporal-consistency (TC) value of a frame pair is the mean absolute
difference between frame t and the flow-aligned frame t+1 over valid
pixels, computed on luma.  Two scalar summaries condense a TC series:

* intra-stack TC: the median of the per-frame values (ignores spikes);
* inter-stack TC: the median of per-window maxima over non-overlapping
  windows of N_o frames, with windows phase-aligned so stack transitions
  fall inside them (this selects the spikes).

Window alignment caveat: windows are anchored so that the first stack's
last output index is the last index of the first window.  For overlapped
schedules, whose transitions are spaced closer than N_o frames, a window
can contain two transitions; the maximum then picks the larger spike.

PSNR of a perfect match is returned as +inf and must be excluded from
averages (``stack_phase_profile`` and the report writers do so, with a
warning).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ConfigError, DataError
from .video_io import Frame, luma_plane, to_luma

if TYPE_CHECKING:  # pragma: no cover
    from .scheduler import StackPlan


class DimMismatch(DataError):
    """Operands have different spatial dimensions or channel counts."""


class TooSmall(DataError):
    """Image too small for the operator's window."""


class EmptyMask(DataError):
    """No valid pixels to aggregate over."""


class EmptySeries(DataError):
    """Metric series is empty (or has no full window)."""


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense per-pixel displacement (u: columns, v: rows) with validity mask.

    The field maps frame ``b`` onto frame ``a``: a(x) ~= b(x + flow(x)).
    """

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(np.asarray(self.u, dtype=np.float64))
        v = np.ascontiguousarray(np.asarray(self.v, dtype=np.float64))
        valid = np.ascontiguousarray(np.asarray(self.valid, dtype=bool))
        if u.ndim != 2 or u.shape != v.shape or u.shape != valid.shape:
            raise DataError(
                f"flow planes must share one 2-D shape, got {u.shape}/{v.shape}/{valid.shape}"
            )
        if valid.any() and not (
            np.all(np.isfinite(u[valid])) and np.all(np.isfinite(v[valid]))
        ):
            raise DataError("flow displacements must be finite where valid")
        for arr in (u, v, valid):
            arr.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @classmethod
    def constant(cls, width: int, height: int, vx: float, vy: float) -> "FlowField":
        return cls(
            np.full((height, width), float(vx)),
            np.full((height, width), float(vy)),
            np.ones((height, width), dtype=bool),
        )

    def inverted(self) -> "FlowField":
        return FlowField(-self.u, -self.v, self.valid)


def warp(frame: Frame, flow: FlowField) -> tuple[Frame, np.ndarray]:
    """Bilinear sample of ``frame`` at x + flow(x).

    Returns the warped frame and a boolean mask that is False wherever the
    flow is invalid or the sample footprint leaves the image.  Values
    under a False mask are clamped-border samples and must be ignored.
    """
    h, w = frame.height, frame.width
    if (flow.height, flow.width) != (h, w):
        raise DimMismatch(f"flow {flow.height}x{flow.width} vs frame {h}x{w}")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    px = xx + np.where(np.isfinite(flow.u), flow.u, 0.0)
    py = yy + np.where(np.isfinite(flow.v), flow.v, 0.0)
    inb = flow.valid & (px >= 0.0) & (px <= w - 1.0) & (py >= 0.0) & (py <= h - 1.0)

    px = np.clip(px, 0.0, w - 1.0)
    py = np.clip(py, 0.0, h - 1.0)
    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = px - x0
    fy = py - y0

    out = np.empty_like(frame.data)
    for c in range(frame.channels):
        p = frame.data[c]
        top = (1.0 - fx) * p[y0, x0] + fx * p[y0, x1]
        bot = (1.0 - fx) * p[y1, x0] + fx * p[y1, x1]
        out[c] = (1.0 - fy) * top + fy * bot
    return Frame(out), inb


def frame_tc(u_t: Frame, u_t1: Frame, flow: FlowField) -> float:
    """Warping error between consecutive frames: mean |u_t - warp(u_t1)| on luma."""
    a = luma_plane(u_t)
    warped, mask = warp(to_luma(u_t1), flow)
    if not mask.any():
        raise EmptyMask("no valid pixels under the flow mask")
    return float(np.mean(np.abs(a - warped.data[0])[mask]))


def psnr(ref: Frame, est: Frame) -> float:
    """10*log10(255^2 / MSE) over all channels; +inf when the frames match."""
    if ref.shape != est.shape:
        raise DimMismatch(f"ref {ref.shape} vs est {est.shape}")
    diff = ref.data - est.data
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_L = 255.0


def _gaussian_taps(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _window_filter(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    out = correlate1d(img, taps, axis=0, mode="reflect")
    return correlate1d(out, taps, axis=1, mode="reflect")


def ssim(ref: Frame, est: Frame) -> float:
    """Mean local SSIM on luma, 11x11 Gaussian window (sigma 1.5), L=255.

    Local statistics use Gaussian-weighted moments; the mean is taken over
    the region where the window fits entirely inside the image.
    """
    if ref.shape != est.shape:
        raise DimMismatch(f"ref {ref.shape} vs est {est.shape}")
    if min(ref.height, ref.width) < _SSIM_WINDOW:
        raise TooSmall(f"SSIM needs min dim >= {_SSIM_WINDOW}, got {ref.height}x{ref.width}")
    x = luma_plane(ref)
    y = luma_plane(est)
    taps = _gaussian_taps(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_x = _window_filter(x, taps)
    mu_y = _window_filter(y, taps)
    sxx = _window_filter(x * x, taps) - mu_x * mu_x
    syy = _window_filter(y * y, taps) - mu_y * mu_y
    sxy = _window_filter(x * y, taps) - mu_x * mu_y
    c1 = (_SSIM_K1 * _SSIM_L) ** 2
    c2 = (_SSIM_K2 * _SSIM_L) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    ssim_map = num / den
    half = _SSIM_WINDOW // 2
    return float(ssim_map[half:-half, half:-half].mean())


# --- TC series statistics --------------------------------------------------


def intra_tc(values) -> float:
    """Median of the per-frame TC series (lower median for even counts).

    Non-finite entries (e.g. fully-masked frame pairs) are ignored.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise EmptySeries("TC series has no finite values")
    return float(np.sort(vals)[(vals.size - 1) // 2])


def inter_tc(values, n_o: int, plan: "StackPlan | None" = None) -> float:
    """Median of per-window maxima over non-overlapping windows of n_o frames.

    Windows are aligned so the first stack's last output index is the last
    index of the first window, putting transition spikes inside windows
    rather than on their edges.  The trailing partial window is discarded.
    """
    if n_o < 1:
        raise ConfigError(f"n_o must be >= 1, got {n_o}")
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise EmptySeries("TC series is empty")
    start = 0
    if plan is not None and len(plan.stacks) > 0:
        start = max(0, (plan.stacks[0].output_stop - 1) - (n_o - 1))
    maxima = []
    for lo in range(start, vals.size - n_o + 1, n_o):
        window = vals[lo : lo + n_o]
        window = window[np.isfinite(window)]
        if window.size:
            maxima.append(window.max())
    if not maxima:
        raise EmptySeries(f"series of {vals.size} has no full window of {n_o}")
    maxima = np.sort(np.asarray(maxima))
    return float(maxima[(maxima.size - 1) // 2])


def stack_phase_profile(psnr_series, plan: "StackPlan") -> np.ndarray:
    """Mean PSNR per within-stack output position 0..N_o-1.

    A frame's position is measured in the stack that emitted it (overlap
    frames belong to the later stack, which blends them).  +inf entries
    are excluded from the means with a warning; positions that never
    occur are NaN.
    """
    series = np.asarray(psnr_series, dtype=np.float64).ravel()
    if series.size != plan.total_frames:
        raise DimMismatch(
            f"series length {series.size} != planned frame count {plan.total_frames}"
        )
    n_o = plan.config.n_o
    sums = np.zeros(n_o)
    counts = np.zeros(n_o, dtype=np.intp)
    skipped = 0
    for t in range(plan.total_frames):
        stack = plan.stacks[plan.emitting_stack_index(t)]
        pos = t - stack.output_start
        if np.isfinite(series[t]):
            sums[pos] += series[t]
            counts[pos] += 1
        else:
            skipped += 1
    if skipped:
        warnings.warn(
            f"excluded {skipped} non-finite PSNR value(s) from the phase profile",
            stacklevel=2,
        )
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


# --- block-matching optical flow -------------------------------------------


def _downsample2(img: np.ndarray) -> np.ndarray:
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    crop = img[: h2 * 2, : w2 * 2]
    return 0.25 * (crop[0::2, 0::2] + crop[1::2, 0::2] + crop[0::2, 1::2] + crop[1::2, 1::2])


def _upsample_flow(plane: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    up = np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1) * 2.0
    pad_y = max(0, shape[0] - up.shape[0])
    pad_x = max(0, shape[1] - up.shape[1])
    if pad_y or pad_x:
        up = np.pad(up, ((0, pad_y), (0, pad_x)), mode="edge")
    return up[: shape[0], : shape[1]]


def _block_anchors(extent: int, bs: int) -> list[int]:
    anchors = list(range(0, extent - bs + 1, bs))
    if anchors[-1] != extent - bs:
        anchors.append(extent - bs)
    return anchors


def _parabola_offset(c_minus: float, c0: float, c_plus: float) -> float:
    denom = c_minus - 2.0 * c0 + c_plus
    if denom <= 1e-12:
        return 0.0
    off = 0.5 * (c_minus - c_plus) / denom
    return float(np.clip(off, -0.5, 0.5))


def _match_level(a, b, pred_u, pred_v, radius, bs, subpixel):
    h, w = a.shape
    u = np.empty((h, w))
    v = np.empty((h, w))
    valid = np.zeros((h, w), dtype=bool)
    ys = _block_anchors(h, bs)
    xs = _block_anchors(w, bs)
    for yi, ay in enumerate(ys):
        y_stop = ys[yi + 1] if yi + 1 < len(ys) else h
        for xi, ax in enumerate(xs):
            x_stop = xs[xi + 1] if xi + 1 < len(xs) else w
            block = a[ay : ay + bs, ax : ax + bs]
            pu = int(round(pred_u[ay + bs // 2, ax + bs // 2]))
            pv = int(round(pred_v[ay + bs // 2, ax + bs // 2]))
            costs: dict[tuple[int, int], float] = {}
            for dy in range(-radius, radius + 1):
                by = ay + pv + dy
                if by < 0 or by + bs > h:
                    continue
                for dx in range(-radius, radius + 1):
                    bx = ax + pu + dx
                    if bx < 0 or bx + bs > w:
                        continue
                    diff = (b[by : by + bs, bx : bx + bs] - block).ravel()
                    costs[(dy, dx)] = float(diff @ diff)
            if not costs:
                # no candidate window fits inside the image: keep the
                # prediction but mark the block invalid
                u[ay:y_stop, ax:x_stop] = float(pu)
                v[ay:y_stop, ax:x_stop] = float(pv)
                continue
            (bdy, bdx) = min(costs, key=costs.get)
            fu = float(pu + bdx)
            fv = float(pv + bdy)
            if subpixel:
                c0 = costs[(bdy, bdx)]
                left = costs.get((bdy, bdx - 1))
                right = costs.get((bdy, bdx + 1))
                if left is not None and right is not None:
                    fu += _parabola_offset(left, c0, right)
                up_c = costs.get((bdy - 1, bdx))
                down_c = costs.get((bdy + 1, bdx))
                if up_c is not None and down_c is not None:
                    fv += _parabola_offset(up_c, c0, down_c)
            u[ay:y_stop, ax:x_stop] = fu
            v[ay:y_stop, ax:x_stop] = fv
            valid[ay:y_stop, ax:x_stop] = True
    return u, v, valid


def estimate_flow(
    a: Frame,
    b: Frame,
    *,
    block_size: int = 8,
    levels: int = 3,
    search_radius: int = 8,
) -> FlowField:
    """Coarse-to-fine block-matching flow mapping ``b`` onto ``a``.

    A Gaussian-free pyramid (2x2 box downsampling) is searched
    exhaustively at the coarsest level (+-search_radius), refined +-2 at
    each finer level, and finished with quadratic sub-pixel refinement on
    the SSD surface.  The valid mask is False for blocks whose search
    window never fit inside the image.
    """
    plane_a = luma_plane(a)
    plane_b = luma_plane(b)
    if plane_a.shape != plane_b.shape:
        raise DimMismatch(f"frames {plane_a.shape} vs {plane_b.shape}")
    h, w = plane_a.shape
    if min(h, w) < 16:
        raise TooSmall(f"flow estimation needs min dim >= 16, got {h}x{w}")

    pyr_a = [plane_a]
    pyr_b = [plane_b]
    while len(pyr_a) < levels and min(pyr_a[-1].shape) >= 4 * block_size:
        pyr_a.append(_downsample2(pyr_a[-1]))
        pyr_b.append(_downsample2(pyr_b[-1]))

    u = np.zeros(pyr_a[-1].shape)
    v = np.zeros(pyr_a[-1].shape)
    valid = np.ones(pyr_a[-1].shape, dtype=bool)
    for li in reversed(range(len(pyr_a))):
        coarsest = li == len(pyr_a) - 1
        if not coarsest:
            u = _upsample_flow(u, pyr_a[li].shape)
            v = _upsample_flow(v, pyr_a[li].shape)
        radius = search_radius if coarsest else 2
        u, v, valid = _match_level(
            pyr_a[li], pyr_b[li], u, v, radius, block_size, subpixel=(li == 0)
        )
    return FlowField(u, v, valid)


# --- flow file container ----------------------------------------------------
#
# Raw float32 planar: per field, u plane then v plane (little-endian
# float32) then a validity byte plane, with {width, height, frames} in a
# JSON sidecar at <path>.json.


def write_flow_fields(flows, path) -> None:
    flows = list(flows)
    if not flows:
        raise EmptySeries("no flow fields to write")
    h, w = flows[0].height, flows[0].width
    path = Path(path)
    with open(path, "wb") as fh:
        for f in flows:
            if (f.height, f.width) != (h, w):
                raise DimMismatch("flow fields must share one shape")
            fh.write(f.u.astype("<f4").tobytes())
            fh.write(f.v.astype("<f4").tobytes())
            fh.write(f.valid.astype(np.uint8).tobytes())
    sidecar = {"width": w, "height": h, "frames": len(flows)}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def read_flow_fields(path) -> list[FlowField]:
    path = Path(path)
    sidecar_file = Path(str(path) + ".json")
    if not sidecar_file.exists():
        raise DataError(f"missing sidecar descriptor {sidecar_file}")
    try:
        meta = json.loads(sidecar_file.read_text())
        w, h, n = (int(meta[k]) for k in ("width", "height", "frames"))
    except (ValueError, KeyError, TypeError) as e:
        raise DataError(f"bad sidecar descriptor {sidecar_file}: {e}") from None
    blob = path.read_bytes()
    rec = 4 * w * h * 2 + w * h
    if len(blob) < n * rec:
        raise DataError(f"flow stream holds {len(blob)} bytes, sidecar promises {n * rec}")
    out = []
    for i in range(n):
        base = i * rec
        u = np.frombuffer(blob, dtype="<f4", count=w * h, offset=base)
        v = np.frombuffer(blob, dtype="<f4", count=w * h, offset=base + 4 * w * h)
        m = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=base + 8 * w * h)
        out.append(
            FlowField(
                u.reshape(h, w).astype(np.float64),
                v.reshape(h, w).astype(np.float64),
                m.reshape(h, w) != 0,
            )
        )
    return out
