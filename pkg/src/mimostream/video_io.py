"""Video frames and bit-exact sequence I/O (Y4M and raw planar).

Samples are stored as real numbers on the [0, 255] scale for the whole
pipeline; quantization to bytes happens only when writing a file.  Only
4:4:4 and mono Y4M streams are supported: chroma-subsampled input is
rejected rather than silently upsampled, which keeps every value written
to disk exactly recoverable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # Rec.601


class MalformedHeader(DataError):
    """Stream header violates the YUV4MPEG2 grammar."""


class UnsupportedColorspace(DataError):
    """Colorspace other than 4:4:4 or mono (e.g. any subsampled format)."""


class TruncatedFrame(DataError):
    """Stream ends before a complete frame payload."""


class EmptySequence(DataError):
    """Write requested for a sequence with no frames."""


@dataclass(frozen=True, eq=False)
class Frame:
    """One planar image: float64 samples of shape (channels, height, width).

    Channels are 1 (mono) or 3 (RGB by pipeline convention; Y4M 4:4:4
    planes map to channels in file order).  Samples must be finite; the
    nominal range is [0, 255] but intermediate values may exceed it.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[np.newaxis, :, :]
        if arr.ndim != 3:
            raise DataError(f"frame data must be 2-D or 3-D, got shape {arr.shape}")
        c, h, w = arr.shape
        if c not in (1, 3):
            raise DataError(f"frame must have 1 or 3 channels, got {c}")
        if h < 1 or w < 1:
            raise DataError(f"frame dimensions must be >= 1, got {h}x{w}")
        if not np.all(np.isfinite(arr)):
            raise DataError("frame samples must be finite")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def plane(self, c: int) -> np.ndarray:
        return self.data[c]


@dataclass(frozen=True, eq=False)
class Sequence:
    """Ordered, homogeneous list of frames plus frame-rate metadata."""

    frames: tuple[Frame, ...]
    frame_rate: tuple[int, int] = (24, 1)
    fmt: "VideoFormat | None" = None

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise DataError("sequence must contain at least one frame")
        shape = frames[0].shape
        for f in frames[1:]:
            if f.shape != shape:
                raise DataError(
                    f"all frames must share one shape; got {shape} and {f.shape}"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def channels(self) -> int:
        return self.frames[0].channels

    def with_frames(self, frames) -> "Sequence":
        """Same metadata, new frames.  Drops fmt (byte round-trip no longer holds)."""
        return Sequence(tuple(frames), frame_rate=self.frame_rate)


@dataclass(frozen=True)
class VideoFormat:
    """Container/colorspace descriptor, including exact Y4M header state.

    ``header_tokens`` preserves the parsed header parameters verbatim (in
    order) so a parse -> write cycle reproduces the input byte for byte;
    ``frame_headers`` does the same for optional per-FRAME parameters.
    """

    container: str = "y4m"  # "y4m" | "raw"
    colorspace: str = "C444"  # "C444" | "Cmono"
    bit_depth: int = 8
    header_tokens: tuple[str, ...] | None = None
    frame_headers: tuple[str, ...] | None = None


_KNOWN_PARAM_KEYS = frozenset("WHFIACX")
_SUPPORTED_COLORSPACES = {"444": 3, "mono": 1}


def _parse_header_tokens(tokens: list[str]):
    """Validate header parameter tokens; return (width, height, rate, channels, cs)."""
    width = height = None
    rate = None
    colorspace = None
    seen = set()
    for tok in tokens:
        if not tok:
            raise MalformedHeader("empty header parameter")
        key, val = tok[0], tok[1:]
        if key not in _KNOWN_PARAM_KEYS:
            raise MalformedHeader(f"unknown header parameter {tok!r}")
        if key in "WHFC" and key in seen:
            raise MalformedHeader(f"duplicate header parameter {key!r}")
        seen.add(key)
        if key == "W":
            width = _parse_positive_int(val, "W")
        elif key == "H":
            height = _parse_positive_int(val, "H")
        elif key == "F":
            rate = _parse_ratio(val, "F")
        elif key == "A":
            _parse_ratio(val, "A", allow_zero=True)
        elif key == "C":
            colorspace = val
        # I and X tokens are preserved verbatim, no validation beyond the key
    if width is None or height is None or rate is None:
        raise MalformedHeader("header must contain W, H and F parameters")
    if colorspace is None:
        # the de-facto default colorspace for Y4M is 4:2:0, which we reject
        raise UnsupportedColorspace("no C parameter; default 4:2:0 is unsupported")
    if colorspace not in _SUPPORTED_COLORSPACES:
        raise UnsupportedColorspace(f"colorspace C{colorspace} is unsupported")
    return width, height, rate, _SUPPORTED_COLORSPACES[colorspace], colorspace


def _parse_positive_int(text: str, key: str) -> int:
    if not text.isdigit() or int(text) < 1:
        raise MalformedHeader(f"parameter {key} must be a positive integer, got {text!r}")
    return int(text)


def _parse_ratio(text: str, key: str, allow_zero: bool = False):
    num, sep, den = text.partition(":")
    if not sep or not num.isdigit() or not den.isdigit():
        raise MalformedHeader(f"parameter {key} must be <int>:<int>, got {text!r}")
    if not allow_zero and (int(num) < 1 or int(den) < 1):
        raise MalformedHeader(f"parameter {key} must be a positive ratio, got {text!r}")
    return int(num), int(den)


def parse_y4m(data: bytes) -> Sequence:
    """Parse a YUV4MPEG2 byte stream into a Sequence.

    Strict by construction: unknown required fields are errors, while
    optional parameters (I, A, X tokens and per-frame parameters) are
    preserved in the returned sequence's ``fmt`` for bit-exact rewriting.
    Sample bytes become float64 values unchanged (no scaling).
    """
    if not data.startswith(b"YUV4MPEG2 "):
        raise MalformedHeader("stream does not start with 'YUV4MPEG2 '")
    nl = data.find(b"\n")
    if nl < 0:
        raise MalformedHeader("header line is not terminated")
    try:
        header = data[10:nl].decode("ascii")
    except UnicodeDecodeError as e:
        raise MalformedHeader(f"header is not ASCII: {e}") from None
    tokens = header.split(" ")
    width, height, rate, channels, cs = _parse_header_tokens(tokens)

    frame_bytes = width * height * channels
    frames: list[Frame] = []
    frame_headers: list[str] = []
    pos = nl + 1
    while pos < len(data):
        if not data.startswith(b"FRAME", pos):
            raise MalformedHeader(f"expected FRAME marker at byte {pos}")
        rec_nl = data.find(b"\n", pos)
        if rec_nl < 0:
            raise TruncatedFrame("FRAME line is not terminated")
        params = data[pos + 5 : rec_nl]
        if params and not params.startswith(b" "):
            raise MalformedHeader(f"bad FRAME parameters at byte {pos}")
        payload = data[rec_nl + 1 : rec_nl + 1 + frame_bytes]
        if len(payload) < frame_bytes:
            raise TruncatedFrame(
                f"frame {len(frames)}: payload {len(payload)} < expected {frame_bytes}"
            )
        samples = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
        frames.append(Frame(samples.reshape(channels, height, width)))
        frame_headers.append(params.decode("ascii"))
        pos = rec_nl + 1 + frame_bytes
    if not frames:
        raise TruncatedFrame("stream contains no FRAME records")

    fmt = VideoFormat(
        container="y4m",
        colorspace="C" + cs,
        header_tokens=tuple(tokens),
        frame_headers=tuple(frame_headers),
    )
    return Sequence(tuple(frames), frame_rate=rate, fmt=fmt)


def quantize(samples: np.ndarray) -> np.ndarray:
    """Round half away from zero, then clamp to [0, 255], as uint8."""
    rounded = np.sign(samples) * np.floor(np.abs(samples) + 0.5)
    return np.clip(rounded, 0.0, 255.0).astype(np.uint8)


def write_y4m(seq: Sequence, fmt: VideoFormat | None = None) -> bytes:
    """Serialize a Sequence as a YUV4MPEG2 stream.

    With ``fmt`` from a previous parse (or ``seq.fmt``), the header and
    per-frame parameters are reproduced verbatim; otherwise a canonical
    header "W H F C" is emitted.
    """
    if fmt is None:
        fmt = seq.fmt
    frames = seq.frames
    if not frames:  # unreachable through the constructor, kept for raw tuples
        raise EmptySequence("cannot write a sequence with no frames")

    if fmt is not None and fmt.header_tokens is not None:
        header = "YUV4MPEG2 " + " ".join(fmt.header_tokens) + "\n"
    else:
        cs = "C444" if seq.channels == 3 else "Cmono"
        num, den = seq.frame_rate
        header = f"YUV4MPEG2 W{seq.width} H{seq.height} F{num}:{den} {cs}\n"

    out = bytearray(header.encode("ascii"))
    frame_headers = fmt.frame_headers if fmt is not None and fmt.frame_headers else None
    for i, frame in enumerate(frames):
        params = frame_headers[i] if frame_headers and i < len(frame_headers) else ""
        out += f"FRAME{params}\n".encode("ascii")
        out += quantize(frame.data).tobytes()
    return bytes(out)


def to_luma(frame: Frame) -> Frame:
    """Rec.601 luma of an RGB frame; mono frames are returned unchanged."""
    if frame.channels == 1:
        return frame
    r, g, b = frame.data
    y = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return Frame(y[np.newaxis, :, :])


def luma_plane(frame: Frame) -> np.ndarray:
    """2-D luma array of a frame (shared with metrics code)."""
    return to_luma(frame).data[0]


# --- raw planar container ------------------------------------------------
#
# Byte stream of frames, each frame channel-major (all of channel 0, then
# 1, then 2), one byte per sample, with a JSON sidecar at <path>.json
# holding {width, height, channels, frames}.


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_raw_planar(seq: Sequence, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        for frame in seq.frames:
            fh.write(quantize(frame.data).tobytes())
    sidecar = {
        "width": seq.width,
        "height": seq.height,
        "channels": seq.channels,
        "frames": len(seq),
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def read_raw_planar(path) -> Sequence:
    path = Path(path)
    sidecar_file = _sidecar_path(path)
    if not sidecar_file.exists():
        raise DataError(f"missing sidecar descriptor {sidecar_file}")
    try:
        meta = json.loads(sidecar_file.read_text())
        w, h, c, n = (int(meta[k]) for k in ("width", "height", "channels", "frames"))
    except (ValueError, KeyError, TypeError) as e:
        raise DataError(f"bad sidecar descriptor {sidecar_file}: {e}") from None
    blob = path.read_bytes()
    frame_bytes = w * h * c
    if len(blob) < n * frame_bytes:
        raise TruncatedFrame(
            f"raw stream holds {len(blob)} bytes, sidecar promises {n * frame_bytes}"
        )
    frames = []
    for t in range(n):
        chunk = blob[t * frame_bytes : (t + 1) * frame_bytes]
        arr = np.frombuffer(chunk, dtype=np.uint8).astype(np.float64)
        frames.append(Frame(arr.reshape(c, h, w)))
    return Sequence(tuple(frames))


def read_video(path) -> Sequence:
    """Read either container by extension (.y4m, else raw planar + sidecar)."""
    path = Path(path)
    if path.suffix.lower() == ".y4m":
        return parse_y4m(path.read_bytes())
    return read_raw_planar(path)
