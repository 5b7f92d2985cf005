"""Stack scheduling: partitioning, overlap blending, recurrence, latency.

A video of T frames is processed in stacks of N_i input frames producing
N_o output frames each (N_i = N_o + 2*N_p, with N_p padding frames on
both ends of the input window).  Output windows advance by N_o - P where
P is the output overlap; each overlapped frame is estimated twice and the
two estimates are combined with linearly ramped weights so the result
transitions smoothly from one stack to the next.  A recurrence policy
selects which raw output frames of stack s-1 are handed to stack s as
memory.

Latency here is the number of future input frames an output frame must
wait for; the worst case is N_o + N_p - 1.  Overlap does not increase it:
an overlap frame waits for the next stack, but it sits at position 0 of
that stack's output window, which is exactly the position that attains
the bound in the non-overlapped schedule.  ``run_pipeline`` measures the
realized per-frame latencies so this can be verified rather than assumed.

Boundary policy: the first stack's leading pad frames are reflected
copies (reflection avoids the brightness bias zero frames would cause in
averaging models); input indices past the end repeat the last frame, so
denoisers always see full-size stacks, and outputs past T-1 are
discarded.
"""

from __future__ import annotations

import bisect
import time
from dataclasses import dataclass

import numpy as np

from .denoisers import (
    Denoiser,
    DenoiserSpec,
    HeterogeneousFrames,
    RecurrenceMemory,
    _as_model,
    denoise_stack,
)
from .errors import ConfigError, DataError
from .video_io import Frame, Sequence


class InvalidConfig(ConfigError):
    """SchedulerConfig invariants violated."""


class PolicyUnavailable(ConfigError):
    """Recurrence policy cannot be applied (overlapped-output with P=0)."""


class LengthMismatch(DataError):
    """Blend operands (or raw output lists) have the wrong length."""


RECURRENCE_MODES = ("none", "prev", "overlap")


@dataclass(frozen=True)
class SchedulerConfig:
    """Stack geometry and recurrence policy.

    ``overlap`` (P) must satisfy 2*P <= N_o: output windows advance by
    N_o - P, so any larger overlap would cover some frames more than
    twice and the pairwise blend would no longer be defined.
    """

    n_i: int
    n_o: int
    overlap: int = 0
    recurrence: str = "none"

    def __post_init__(self):
        if self.n_o < 1 or self.n_i < self.n_o:
            raise InvalidConfig(f"need N_i >= N_o >= 1, got N_i={self.n_i} N_o={self.n_o}")
        if (self.n_i - self.n_o) % 2 != 0:
            raise InvalidConfig(f"N_i - N_o must be even, got {self.n_i - self.n_o}")
        if not (0 <= self.overlap < self.n_o):
            raise InvalidConfig(f"need 0 <= P < N_o, got P={self.overlap} N_o={self.n_o}")
        if 2 * self.overlap > self.n_o:
            raise InvalidConfig(
                f"need 2*P <= N_o for pairwise overlap blending, got P={self.overlap} N_o={self.n_o}"
            )
        if self.recurrence not in RECURRENCE_MODES:
            raise InvalidConfig(f"recurrence must be one of {RECURRENCE_MODES}")
        if self.recurrence == "overlap" and self.overlap < 1:
            raise InvalidConfig("overlapped-output recurrence requires P >= 1")

    @property
    def n_p(self) -> int:
        return (self.n_i - self.n_o) // 2

    @property
    def stride(self) -> int:
        return self.n_o - self.overlap


def worst_case_latency(config: SchedulerConfig) -> int:
    """Upper bound on future frames needed before any output can be emitted."""
    return config.n_o + config.n_p - 1


@dataclass(frozen=True)
class StackSpan:
    """One stack's window: virtual input start and emitted output range."""

    index: int
    input_start: int  # c_s - N_p; may be negative (start padding)
    output_start: int  # c_s
    output_stop: int  # d_s, clipped to T for the final stack


@dataclass(frozen=True)
class StackPlan:
    """Full schedule for a T-frame video under one SchedulerConfig."""

    config: SchedulerConfig
    total_frames: int
    stacks: tuple[StackSpan, ...]

    def emitting_stack_index(self, t: int) -> int:
        """Index of the stack that emits frame t (the later one for overlaps)."""
        if not (0 <= t < self.total_frames):
            raise DataError(f"frame {t} outside [0, {self.total_frames})")
        starts = [s.output_start for s in self.stacks]
        idx = bisect.bisect_right(starts, t) - 1
        return idx

    def overlap_with_prev(self, index: int) -> tuple[int, int]:
        """Frame range [c_s, c_s + P) estimated by both stack index-1 and index."""
        if index == 0 or self.config.overlap == 0:
            return (self.stacks[index].output_start, self.stacks[index].output_start)
        c = self.stacks[index].output_start
        return (c, c + self.config.overlap)

    def input_indices(self, index: int) -> list[int]:
        """Concrete source-frame indices for one stack's input window.

        Virtual indices before 0 reflect (i -> -i); indices at or past T
        repeat the last frame.
        """
        span = self.stacks[index]
        t_max = self.total_frames - 1
        out = []
        for i in range(span.input_start, span.input_start + self.config.n_i):
            if i < 0:
                i = -i
            if i > t_max:
                i = t_max
            out.append(i)
        return out


def plan_stacks(total_frames: int, config: SchedulerConfig) -> StackPlan:
    """Schedule stacks so output ranges tile [0, T) with stride N_o - P.

    Every non-final stack emits a full N_o-frame output range; the final
    stack's range is clipped to T.  Frames covered by two ranges are
    exactly the P-frame overlap regions.
    """
    if total_frames < 1:
        raise InvalidConfig(f"need at least 1 frame, got {total_frames}")
    spans = []
    c = 0
    while True:
        spans.append(
            StackSpan(
                index=len(spans),
                input_start=c - config.n_p,
                output_start=c,
                output_stop=min(c + config.n_o, total_frames),
            )
        )
        if c + config.n_o >= total_frames:
            break
        c += config.stride
    return StackPlan(config=config, total_frames=total_frames, stacks=tuple(spans))


def blend_weights(p: int) -> np.ndarray:
    """Ramp weights alpha_i = i/(P+1), i = 1..P, for the newer stack's estimate."""
    if p < 0:
        raise InvalidConfig(f"overlap must be >= 0, got {p}")
    return np.arange(1, p + 1, dtype=np.float64) / (p + 1)


def blend_overlap(prev_tail, next_head) -> list[Frame]:
    """Combine the two estimates of an overlap region.

    Position i (1-based, earliest overlap frame first) gets
    (1 - alpha_i) * prev + alpha_i * next with alpha_i = i/(P+1), so the
    result moves linearly from the older stack's estimate to the newer
    one's.  Computed in real arithmetic, no quantization.
    """
    prev_tail = list(prev_tail)
    next_head = list(next_head)
    if len(prev_tail) != len(next_head):
        raise LengthMismatch(f"overlap lists differ: {len(prev_tail)} vs {len(next_head)}")
    alphas = blend_weights(len(prev_tail))
    out = []
    for a, old, new in zip(alphas, prev_tail, next_head):
        if old.shape != new.shape:
            raise HeterogeneousFrames(f"blend mixes {old.shape} and {new.shape}")
        out.append(Frame((1.0 - a) * old.data + a * new.data))
    return out


def select_memory(
    mode: str,
    prev_outputs,
    prev_memory: RecurrenceMemory,
    config: SchedulerConfig,
) -> RecurrenceMemory:
    """Memory for stack s built from stack s-1's RAW (pre-blend) outputs.

    * ``none``: the model's own memory passes through only if it is a
      state map (model-internal recurrence); anything else becomes empty.
    * ``prev``: the single output frame preceding stack s's first output
      frame: raw index N_o - P - 1, i.e. the last output before the
      overlap region (the last output frame when P = 0).  Offset -1.
    * ``overlap``: the last P raw outputs, which are the previous stack's
      estimates of stack s's first P output frames.  Offsets 0..P-1.
    """
    if mode == "none":
        if prev_memory.kind == "state":
            return prev_memory
        return RecurrenceMemory.empty()
    prev_outputs = list(prev_outputs)
    if len(prev_outputs) != config.n_o:
        raise LengthMismatch(
            f"expected {config.n_o} raw outputs from the previous stack, got {len(prev_outputs)}"
        )
    if mode == "prev":
        idx = config.n_o - config.overlap - 1
        return RecurrenceMemory.from_frames([prev_outputs[idx]], [-1])
    if mode == "overlap":
        if config.overlap < 1:
            raise PolicyUnavailable("overlapped-output recurrence requires P >= 1")
        p = config.overlap
        return RecurrenceMemory.from_frames(prev_outputs[config.n_o - p :], range(p))
    raise InvalidConfig(f"unknown recurrence mode {mode!r}")


@dataclass(frozen=True)
class LatencyBudget:
    """Contracted worst case plus the realized per-frame latencies."""

    worst_case: int
    per_output_frame: tuple[int, ...]

    def __post_init__(self):
        if any(lat > self.worst_case for lat in self.per_output_frame):
            raise DataError("observed latency exceeds the worst-case bound")

    @property
    def max_observed(self) -> int:
        return max(self.per_output_frame)


@dataclass(frozen=True)
class CostReport:
    """Denoiser invocation counts; wall time is informative, not contracted."""

    invocations: int
    frames_denoised: int  # invocations * N_o
    frames_emitted: int
    wall_seconds: float

    @property
    def invocations_per_frame(self) -> float:
        """Frame-denoisings per emitted frame; approaches N_o/(N_o - P)."""
        return self.frames_denoised / self.frames_emitted


def run_pipeline(seq: Sequence, config: SchedulerConfig, spec):
    """Denoise a sequence under a schedule; returns (denoised, budget, cost).

    Stacks run in plan order (recurrence serializes them).  Non-overlap
    frames are emitted as soon as their stack completes; an overlap frame
    is buffered until the next stack supplies the second estimate and is
    emitted blended.  The latency recorded for frame t is the largest
    input index read before t was emitted, minus t.
    """
    started = time.perf_counter()
    model = _as_model(spec)
    total = len(seq)
    plan = plan_stacks(total, config)
    n_o, p = config.n_o, config.overlap

    out_frames: list[Frame | None] = [None] * total
    latencies = [0] * total
    memory = model.zero_memory()
    prev_raw: list[Frame] | None = None

    for span in plan.stacks:
        window = [seq.frames[i] for i in plan.input_indices(span.index)]
        raw, model_memory = denoise_stack(model, window, memory, n_o)
        # largest real input index this stack reads (end padding reads no
        # future frames, hence the clamp to T-1)
        read_idx = min(span.input_start + config.n_i - 1, total - 1)

        def emit(t: int, frame: Frame):
            out_frames[t] = frame
            latencies[t] = read_idx - t

        c = span.output_start
        if span.index > 0 and p > 0:
            for i, frame in enumerate(blend_overlap(prev_raw[n_o - p :], raw[:p])):
                emit(c + i, frame)
        own_start = c + (p if span.index > 0 else 0)
        is_last = span.index == len(plan.stacks) - 1
        own_stop = span.output_stop if is_last else plan.stacks[span.index + 1].output_start
        for t in range(own_start, own_stop):
            emit(t, raw[t - c])

        memory = select_memory(config.recurrence, raw, model_memory, config)
        prev_raw = raw

    assert all(f is not None for f in out_frames), "scheduler failed to cover [0, T)"
    budget = LatencyBudget(
        worst_case=worst_case_latency(config), per_output_frame=tuple(latencies)
    )
    cost = CostReport(
        invocations=len(plan.stacks),
        frames_denoised=len(plan.stacks) * n_o,
        frames_emitted=total,
        wall_seconds=time.perf_counter() - started,
    )
    return seq.with_frames(out_frames), budget, cost
