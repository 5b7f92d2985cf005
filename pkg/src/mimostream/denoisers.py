"""Pluggable denoiser contract and analytic reference denoisers.

A denoiser maps a stack of N_i input frames (plus a recurrence memory) to
the center N_o output frames and an updated memory.  The reference models
are simple analytic filters rather than trained networks: the phenomena
the scheduler manipulates (border-frame quality drop inside a stack,
transition spikes, the benefit of cross-stack recurrence and output
overlap) are properties of temporal support and stack partitioning, which
these filters expose with exact statistical oracles.

Memory payloads:

* ``empty`` / ``zero``: universal cold start; every model must accept it
  and treat it like zero-valued planes (models whose memory is a frame
  average treat it as "no memory contribution" instead of averaging in a
  black frame).
* ``frames``: output frames selected by the scheduler's recurrence
  policy, annotated with their time offsets relative to the receiving
  stack's first output frame.
* ``state``: named planes owned entirely by the model; the scheduler
  passes them through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, DataError
from .metrics import FlowField, estimate_flow, warp
from .video_io import Frame


class BadStackShape(ConfigError):
    """N_i - N_o odd, or N_o > N_i, or N_o < 1."""


class HeterogeneousFrames(DataError):
    """Frames in one stack (or blend) differ in shape."""


@dataclass(frozen=True, eq=False)
class RecurrenceMemory:
    """Opaque cross-stack state; see the module docstring for the kinds."""

    kind: str
    frames: tuple[Frame, ...] = ()
    offsets: tuple[int, ...] = ()
    state: Mapping[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("empty", "zero", "frames", "state"):
            raise ConfigError(f"unknown memory kind {self.kind!r}")
        if self.kind == "frames" and len(self.frames) != len(self.offsets):
            raise ConfigError("frames memory needs one time offset per frame")

    @classmethod
    def empty(cls) -> "RecurrenceMemory":
        return cls(kind="empty")

    @classmethod
    def zero_state(cls) -> "RecurrenceMemory":
        return cls(kind="zero")

    @classmethod
    def from_frames(cls, frames, offsets) -> "RecurrenceMemory":
        return cls(kind="frames", frames=tuple(frames), offsets=tuple(int(o) for o in offsets))

    @classmethod
    def state_map(cls, state: Mapping[str, np.ndarray]) -> "RecurrenceMemory":
        return cls(kind="state", state=dict(state))

    @property
    def is_cold(self) -> bool:
        return self.kind in ("empty", "zero")


DENOISER_KINDS = ("identity", "temporal_average", "mc_average", "recurrent_exp")


@dataclass(frozen=True)
class DenoiserSpec:
    """Serializable denoiser selection, validated per kind at construction.

    Params by kind:

    * ``identity``, ``temporal_average``: none.
    * ``mc_average``: ``temporal_radius`` (int or None = whole stack) caps
      the temporal support |k - r| of contributions; ``gt_velocity``
      ((vx, vy) or None) switches from estimated flow to the exact
      constant flow of a global-translation scene.
    * ``recurrent_exp``: ``decay`` in (0, 1] plus the mc_average params.
    """

    kind: str
    params: Mapping[str, object] = field(default_factory=dict)
    uses_memory: bool = False

    def __post_init__(self):
        if self.kind not in DENOISER_KINDS:
            raise ConfigError(f"unknown denoiser kind {self.kind!r}")
        params = dict(self.params)
        object.__setattr__(self, "params", params)
        allowed = {
            "identity": set(),
            "temporal_average": set(),
            "mc_average": {"temporal_radius", "gt_velocity"},
            "recurrent_exp": {"decay", "temporal_radius", "gt_velocity"},
        }[self.kind]
        unknown = set(params) - allowed
        if unknown:
            raise ConfigError(f"{self.kind}: unknown params {sorted(unknown)}")
        if self.kind in ("identity", "temporal_average") and self.uses_memory:
            raise ConfigError(f"{self.kind} is memoryless; uses_memory must be False")
        if self.kind == "recurrent_exp":
            if not self.uses_memory:
                raise ConfigError("recurrent_exp requires uses_memory=True")
            decay = params.get("decay", 0.5)
            if not (0.0 < float(decay) <= 1.0):
                raise ConfigError(f"decay must be in (0, 1], got {decay}")
        radius = params.get("temporal_radius")
        if radius is not None and int(radius) < 0:
            raise ConfigError(f"temporal_radius must be >= 0, got {radius}")
        vel = params.get("gt_velocity")
        if vel is not None:
            vx, vy = vel
            params["gt_velocity"] = (float(vx), float(vy))

    def build(self) -> "Denoiser":
        if self.kind == "identity":
            return Identity()
        if self.kind == "temporal_average":
            return TemporalAverage()
        if self.kind == "mc_average":
            return MotionCompensatedAverage(
                temporal_radius=self.params.get("temporal_radius"),
                gt_velocity=self.params.get("gt_velocity"),
                uses_memory=self.uses_memory,
            )
        return RecurrentExponential(
            decay=float(self.params.get("decay", 0.5)),
            temporal_radius=self.params.get("temporal_radius"),
            gt_velocity=self.params.get("gt_velocity"),
        )


class Denoiser:
    """Base class for stack denoisers.  Subclasses implement ``_run``."""

    uses_memory: bool = False

    def zero_memory(self) -> RecurrenceMemory:
        return RecurrenceMemory.zero_state() if self.uses_memory else RecurrenceMemory.empty()

    def denoise_stack(self, stack, memory: RecurrenceMemory, out_count: int):
        stack = list(stack)
        n_i = len(stack)
        if out_count < 1 or out_count > n_i or (n_i - out_count) % 2 != 0:
            raise BadStackShape(
                f"need N_i >= N_o >= 1 with N_i - N_o even, got N_i={n_i} N_o={out_count}"
            )
        shape = stack[0].shape
        for f in stack[1:]:
            if f.shape != shape:
                raise HeterogeneousFrames(f"stack mixes {shape} and {f.shape}")
        n_p = (n_i - out_count) // 2
        return self._run(stack, n_p, out_count, memory)

    def _run(self, stack, n_p, out_count, memory):
        raise NotImplementedError


class Identity(Denoiser):
    """Passes the center N_o inputs through unchanged."""

    def _run(self, stack, n_p, out_count, memory):
        return list(stack[n_p : n_p + out_count]), RecurrenceMemory.empty()


class TemporalAverage(Denoiser):
    """Every output is the plain mean of all stack frames.

    No motion compensation, so translation produces motion blur and
    clearly visible stack-boundary discontinuities.
    """

    def _run(self, stack, n_p, out_count, memory):
        mean = Frame(np.mean([f.data for f in stack], axis=0))
        return [mean] * out_count, RecurrenceMemory.empty()


class _FlowSource:
    """Flow provider for warping frame at time ``src`` onto time ``ref``."""

    def __init__(self, gt_velocity):
        self.gt_velocity = gt_velocity
        self._cache: dict[tuple[int, int], FlowField] = {}

    def flow(self, frames_by_time, src: int, ref: int) -> FlowField:
        key = (src, ref)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        ref_frame = frames_by_time[ref]
        if self.gt_velocity is not None:
            vx, vy = self.gt_velocity
            dt = src - ref
            field_ = FlowField.constant(ref_frame.width, ref_frame.height, dt * vx, dt * vy)
        elif src in frames_by_time:
            field_ = estimate_flow(ref_frame, frames_by_time[src])
        else:
            field_ = FlowField.constant(ref_frame.width, ref_frame.height, 0.0, 0.0)
        self._cache[key] = field_
        return field_


def _masked_average(contributions, reference: Frame) -> Frame:
    """Per-pixel mean over valid contributions; fall back to the reference
    frame where nothing is valid."""
    acc = np.zeros_like(reference.data)
    count = np.zeros(reference.data.shape[1:])
    for frame, mask in contributions:
        acc += frame.data * mask[np.newaxis]
        count += mask
    covered = count > 0
    out = np.where(covered[np.newaxis], acc / np.maximum(count, 1.0)[np.newaxis], reference.data)
    return Frame(out)


class MotionCompensatedAverage(Denoiser):
    """Warps temporally nearby stack frames onto each output and averages.

    ``temporal_radius`` caps the support |k - r| <= radius (None takes the
    whole stack); fewer in-stack neighbors are available near the stack
    borders, so border outputs average fewer frames and score lower,
    which is what recurrence then repairs.  With ``uses_memory`` the
    frames handed over by the scheduler's recurrence policy join the
    average (warped likewise) whenever they fall inside the radius.
    """

    def __init__(self, temporal_radius=None, gt_velocity=None, uses_memory=False):
        self.temporal_radius = None if temporal_radius is None else int(temporal_radius)
        self.gt_velocity = gt_velocity
        self.uses_memory = bool(uses_memory)

    def _contributors(self, stack, n_p, memory):
        by_time = {k: f for k, f in enumerate(stack)}
        extra = []
        if self.uses_memory and memory.kind == "frames":
            for f, off in zip(memory.frames, memory.offsets):
                t = n_p + off
                extra.append((t, f))
                by_time.setdefault(t, f)
        return by_time, extra

    def _average_at(self, stack, n_p, ref: int, memory, flows: _FlowSource) -> Frame:
        by_time, extra = self._contributors(stack, n_p, memory)
        radius = self.temporal_radius if self.temporal_radius is not None else len(stack) + len(extra)
        contributions = []
        for k, f in enumerate(stack):
            if abs(k - ref) > radius:
                continue
            if k == ref:
                contributions.append((f, np.ones(f.data.shape[1:], dtype=bool)))
            else:
                contributions.append(warp(f, flows.flow(by_time, k, ref)))
        for t, f in extra:
            if abs(t - ref) <= radius:
                contributions.append(warp(f, flows.flow(by_time, t, ref)))
        return _masked_average(contributions, stack[ref])

    def _run(self, stack, n_p, out_count, memory):
        flows = _FlowSource(self.gt_velocity)
        outputs = [
            self._average_at(stack, n_p, n_p + j, memory, flows) for j in range(out_count)
        ]
        return outputs, RecurrenceMemory.empty()


class RecurrentExponential(MotionCompensatedAverage):
    """Causal running average: S <- decay*mc + (1-decay)*warp(S).

    ``mc`` is the motion-compensated average at the current output time;
    outputs are snapshots of S.  A cold start (empty/zero memory) begins
    from zero-valued planes, so the first outputs of a run are visibly
    biased dark until the state warms up -- which is exactly what handing
    the previous stack's output frames across the transition repairs.
    """

    uses_memory = True

    def __init__(self, decay=0.5, temporal_radius=None, gt_velocity=None):
        super().__init__(temporal_radius=temporal_radius, gt_velocity=gt_velocity, uses_memory=True)
        if not (0.0 < decay <= 1.0):
            raise ConfigError(f"decay must be in (0, 1], got {decay}")
        self.decay = float(decay)

    def _run(self, stack, n_p, out_count, memory):
        flows = _FlowSource(self.gt_velocity)
        by_time = {k: f for k, f in enumerate(stack)}
        if memory.kind == "frames" and memory.frames:
            state = memory.frames[-1].data.copy()
            state_time = n_p + memory.offsets[-1]
            by_time.setdefault(state_time, memory.frames[-1])
        else:
            state = np.zeros_like(stack[0].data)
            state_time = n_p - 1

        outputs = []
        cold_memory = RecurrenceMemory.empty()
        for j in range(out_count):
            ref = n_p + j
            # stack-only support: cross-stack information arrives via the state
            mc = MotionCompensatedAverage._average_at(
                self, stack, n_p, ref, cold_memory, flows
            )
            carried, mask = warp(Frame(state), flows.flow(by_time, state_time, ref))
            mix = self.decay * mc.data + (1.0 - self.decay) * carried.data
            new_state = np.where(mask[np.newaxis], mix, mc.data)
            outputs.append(Frame(new_state))
            state = new_state
            state_time = ref
        return outputs, RecurrenceMemory.from_frames([outputs[-1]], [out_count - 1])


def _as_model(spec) -> Denoiser:
    if isinstance(spec, DenoiserSpec):
        return spec.build()
    if isinstance(spec, Denoiser):
        return spec
    raise ConfigError(f"expected DenoiserSpec or Denoiser, got {type(spec).__name__}")


def zero_memory(spec) -> RecurrenceMemory:
    """Initial memory for the first stack of a run (cold start)."""
    return _as_model(spec).zero_memory()


def denoise_stack(spec, stack, memory: RecurrenceMemory, out_count: int):
    """Run one stack evaluation: (outputs of length out_count, new memory).

    Outputs correspond to input indices N_p .. N_p + N_o - 1 where
    N_p = (N_i - N_o) / 2.
    """
    return _as_model(spec).denoise_stack(stack, memory, out_count)
