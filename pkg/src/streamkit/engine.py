"""Dual KV-cache decode engine for sentence-streamed reasoning.

Two append-only caches: one for the still-arriving input stream, one for the
model's own output. While a reasoning step decodes, the engine works on a
merged view (a unit-aligned slice of the input cache plus the whole output
cache); when the step's terminator appears the view splits again so newly
arrived sentences can keep prefilling without disturbing decode state. A
scheduler gate lets reasoning step k start only once its aligned input prefix
has fully arrived. The virtual-time driver replays an arrival schedule
deterministically and logs prefill/merge/decode/split/wait events; a batch
oracle recomputes the same sequence in one masked forward pass for
equivalence checks.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .layout import (
    DEFAULT_MARKERS,
    AlignmentMap,
    MarkerVocab,
    SegmentLayout,
    TokenKind,
    build_alignment,
)
from .masks import NEG_INF, streaming_mask_segment
from .model import (
    ModelWeights,
    SamplerConfig,
    masked_softmax,
    next_token,
    rms_norm,
    gelu,
    split_heads,
)
from .rope import Grouping, grouped_positions, rotate_many


class DeadlockError(RuntimeError):
    """The gate can never open again: reasoning is ahead of an arrival
    schedule that has nothing left to deliver."""


class CacheMode(Enum):
    SPLIT = "split"
    MERGED = "merged"


@dataclass
class LayerKv:
    """Append-only per-layer cache of rotated keys and values."""

    keys: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls, n_heads: int, head_dim: int) -> "LayerKv":
        shape = (0, n_heads, head_dim)
        return cls(np.zeros(shape, dtype=np.float32), np.zeros(shape, dtype=np.float32))

    def append(self, k: np.ndarray, v: np.ndarray) -> None:
        self.keys = np.concatenate([self.keys, k.astype(np.float32)], axis=0)
        self.values = np.concatenate([self.values, v.astype(np.float32)], axis=0)

    def __len__(self) -> int:
        return self.keys.shape[0]


@dataclass
class DualKvState:
    """Bookkeeping for the two caches and the scheduler gate counters.
    ``n_eos_seen`` counts fully prefilled input units (sentence or question
    terminators alike); ``n_eot_done`` counts completed reasoning units
    (step, interpretation, or chain-final terminators alike)."""

    input_kv: list[LayerKv]
    output_kv: list[LayerKv]
    mode: CacheMode = CacheMode.SPLIT
    merged_visible_len: int = 0
    n_eos_seen: int = 0
    n_eot_done: int = 0

    @classmethod
    def fresh(cls, n_layers: int, n_heads: int, head_dim: int) -> "DualKvState":
        return cls(
            input_kv=[LayerKv.empty(n_heads, head_dim) for _ in range(n_layers)],
            output_kv=[LayerKv.empty(n_heads, head_dim) for _ in range(n_layers)],
        )

    def cache_bytes(self) -> bytes:
        """Concatenated byte image of both caches, for bitwise comparisons."""
        parts = []
        for kv in (*self.input_kv, *self.output_kv):
            parts.append(kv.keys.tobytes())
            parts.append(kv.values.tobytes())
        return b"".join(parts)


@dataclass(frozen=True)
class ArrivalSchedule:
    """Completion time (seconds) of each arrival-ordered input unit."""

    times: tuple[float, ...]

    def __post_init__(self) -> None:
        prev = 0.0
        for t in self.times:
            if t < prev:
                raise ValueError("arrival times must be nondecreasing and nonnegative")
            prev = t

    @classmethod
    def from_rate(cls, unit_lengths: Sequence[int], tokens_per_second: float) -> "ArrivalSchedule":
        """Units arrive back to back at a constant token rate; a unit is
        delivered when its last token has arrived."""
        if tokens_per_second <= 0:
            raise ValueError("arrival rate must be positive")
        acc, times = 0, []
        for n in unit_lengths:
            acc += n
            times.append(acc / tokens_per_second)
        return cls(tuple(times))

    @classmethod
    def immediate(cls, n_units: int) -> "ArrivalSchedule":
        return cls(tuple(0.0 for _ in range(n_units)))


@dataclass(frozen=True)
class EngineEvent:
    t: float
    event: str  # prefill | merge | decode | split | wait
    unit: int
    tokens: int

    def to_json(self) -> dict:
        return {"t": self.t, "event": self.event, "unit": self.unit, "tokens": self.tokens}


# ---------------------------------------------------------------------------
# the engine proper (time-free state machine)
# ---------------------------------------------------------------------------

class StreamingEngine:
    """Incremental forward passes over the dual cache. The engine holds no
    clock; drivers own time and the event log. All mutating methods take an
    internal lock so a producer thread may prefill while a consumer decodes."""

    def __init__(
        self,
        weights: ModelWeights,
        markers: MarkerVocab = DEFAULT_MARKERS,
        sentinel: float = NEG_INF,
    ) -> None:
        cfg = weights.config
        self.weights = weights
        self.markers = markers
        self.sentinel = sentinel
        self.state = DualKvState.fresh(cfg.n_layers, cfg.n_heads, cfg.head_dim)
        self.input_unit_lengths: list[int] = []
        self.prefill_logits: list[np.ndarray] = []  # one (block, vocab) array per unit
        self.output_logits: list[np.ndarray] = []   # one (vocab,) row per fed output token
        self._pending: np.ndarray | None = None     # row that produces the next output token
        self._rot = cfg.rotary()
        self._lock = threading.Lock()
        self.gate_changed = threading.Condition(self._lock)
        # test hook: shifts the merged slice by this many tokens, bypassing the
        # unit-boundary check, to prove downstream equivalence checks catch it
        self.fault_slice_offset = 0

    # ---- producer side ----------------------------------------------------

    def prefill_unit(self, token_ids: Sequence[int]) -> np.ndarray:
        """Append one fully arrived input unit to the input cache. Returns the
        logits rows of the unit's tokens. Works in either cache mode; a merged
        view is bounded by its recorded visible length, so appends behind it
        are invisible to in-flight decoding."""
        ids = [int(t) for t in token_ids]
        if not ids:
            raise ValueError("cannot prefill an empty unit")
        with self.gate_changed:
            start = sum(self.input_unit_lengths)
            positions = np.arange(start, start + len(ids), dtype=np.int64)
            ctx = [(kv.keys, kv.values) for kv in self.state.input_kv]
            logits = self._forward_block(ids, positions, ctx, self.state.input_kv)
            self.input_unit_lengths.append(len(ids))
            self.prefill_logits.append(logits)
            if self._pending is None:
                self._pending = logits[-1].copy()
            self.state.n_eos_seen += 1
            self.gate_changed.notify_all()
        return logits

    # ---- consumer side ----------------------------------------------------

    def gate_open(self, required_units: int) -> bool:
        return self.state.n_eos_seen >= required_units

    def merge(self, visible_units: int) -> None:
        """Bind a merged view: the first ``visible_units`` input units plus the
        whole output cache. Slices are only legal on unit boundaries."""
        with self._lock:
            if self.state.mode == CacheMode.MERGED:
                raise RuntimeError("caches are already merged")
            if not 0 <= visible_units <= len(self.input_unit_lengths):
                raise ValueError(
                    f"cannot merge {visible_units} units, only {len(self.input_unit_lengths)} arrived"
                )
            vis = sum(self.input_unit_lengths[:visible_units]) + self.fault_slice_offset
            vis = max(0, min(vis, len(self.state.input_kv[0])))
            self.state.merged_visible_len = vis
            self.state.mode = CacheMode.MERGED

    def split(self) -> None:
        with self._lock:
            if self.state.mode == CacheMode.SPLIT:
                raise RuntimeError("caches are already split")
            self.state.mode = CacheMode.SPLIT
            self.state.merged_visible_len = 0

    def decode_step(
        self,
        forced_id: int | None = None,
        sampler: SamplerConfig | None = None,
        rng: np.random.Generator | None = None,
    ) -> tuple[int, np.ndarray]:
        """Feed one output token under the merged view and return it with its
        logits row. The token is the forced id if given, otherwise sampled from
        the pending row. A terminator marks the reasoning unit done and splits
        the view."""
        with self._lock:
            if self.state.mode != CacheMode.MERGED:
                raise RuntimeError("decode requires merged caches")
            if forced_id is None:
                if self._pending is None:
                    raise RuntimeError("no pending logits to sample from")
                if sampler is None:
                    sampler = SamplerConfig()
                token = next_token(self._pending, sampler, rng)
            else:
                token = int(forced_id)
            vis = self.state.merged_visible_len
            out_len = len(self.state.output_kv[0])
            ctx = [
                (np.concatenate([inp.keys[:vis], out.keys], axis=0),
                 np.concatenate([inp.values[:vis], out.values], axis=0))
                for inp, out in zip(self.state.input_kv, self.state.output_kv)
            ]
            positions = np.asarray([out_len], dtype=np.int64)
            logits = self._forward_block([token], positions, ctx, self.state.output_kv)
            row = logits[0]
            self.output_logits.append(row)
            self._pending = row.copy()
            terminated = self.markers.kind_of(token) in (TokenKind.EOT, TokenKind.EOQ, TokenKind.EOR)
            if terminated:
                self.state.n_eot_done += 1
        if terminated:
            self.split()
        return token, row

    # ---- shared math -------------------------------------------------------

    def _forward_block(
        self,
        ids: Sequence[int],
        position_ids: np.ndarray,
        ctx: list[tuple[np.ndarray, np.ndarray]],
        append_to: list[LayerKv],
    ) -> np.ndarray:
        """Forward a block of new tokens against per-layer context K/V, with
        causal attention inside the block. Appends the block's K/V to the
        target cache and returns (block, vocab) logits."""
        w = self.weights
        cfg = w.config
        n_new = len(ids)
        x = w.embed[np.asarray(ids, dtype=np.int64)].astype(np.float32)
        scale = np.float32(1.0 / np.sqrt(cfg.head_dim))
        intra = np.where(
            np.arange(n_new)[None, :] > np.arange(n_new)[:, None],
            np.float32(self.sentinel), np.float32(0.0),
        ).astype(np.float32)
        for li, layer in enumerate(w.layers):
            h = rms_norm(x)
            q = rotate_many(split_heads(h @ layer.wq, cfg.n_heads, cfg.head_dim),
                            position_ids[:, None], self._rot)
            k = rotate_many(split_heads(h @ layer.wk, cfg.n_heads, cfg.head_dim),
                            position_ids[:, None], self._rot)
            v = split_heads(h @ layer.wv, cfg.n_heads, cfg.head_dim)
            k_ctx, v_ctx = ctx[li]
            k_all = np.concatenate([k_ctx, k], axis=0)
            v_all = np.concatenate([v_ctx, v], axis=0)
            scores = np.einsum("qhd,khd->hqk", q, k_all).astype(np.float32) * scale
            scores[:, :, k_ctx.shape[0]:] += intra[None]
            attn = masked_softmax(scores)
            ctx_vec = np.einsum("hqk,khd->qhd", attn, v_all).astype(np.float32)
            x = (x + ctx_vec.reshape(n_new, cfg.model_dim) @ layer.wo).astype(np.float32)
            h2 = rms_norm(x)
            x = (x + gelu(h2 @ layer.w1) @ layer.w2).astype(np.float32)
            append_to[li].append(k, v)
        return (rms_norm(x) @ w.unembed).astype(np.float32)


# ---------------------------------------------------------------------------
# batch oracle
# ---------------------------------------------------------------------------

def batch_oracle_forward(
    weights: ModelWeights,
    layout: SegmentLayout,
    alignment: AlignmentMap | None = None,
) -> np.ndarray:
    """One full masked forward over input + reasoning + answer, using the
    segment-level mask and grouped positions. This is the reference the cache
    engine must reproduce row for row. With no reasoning and no answer it
    degenerates to a plain causal forward over the input."""
    from .model import forward

    if alignment is None:
        alignment = (
            build_alignment(layout) if layout.reasoning_units else AlignmentMap(())
        )
    mask = streaming_mask_segment(layout, alignment)
    positions = grouped_positions(layout, Grouping.STREAMING_GROUPED)
    ids = [t.id for t in layout.full_tokens()]
    return forward(ids, mask, positions, weights)


# ---------------------------------------------------------------------------
# virtual-time driver
# ---------------------------------------------------------------------------

@dataclass
class StreamResult:
    reasoning_tokens: list[list[int]]
    answer_tokens: list[int]
    events: list[EngineEvent]
    prefill_logits: np.ndarray | None
    output_logits: np.ndarray | None
    first_answer_time: float | None
    engine: StreamingEngine

    def events_json(self) -> list[dict]:
        return [e.to_json() for e in self.events]


def run_streaming_decode(
    weights: ModelWeights,
    layout: SegmentLayout,
    schedule: ArrivalSchedule,
    decode_rate: float,
    *,
    markers: MarkerVocab = DEFAULT_MARKERS,
    sampler: SamplerConfig | None = None,
    teacher_forced: bool = True,
    max_unit_tokens: int = 32,
    fault_slice_offset: int = 0,
    collect_logits: bool = True,
    alignment: AlignmentMap | None = None,
) -> StreamResult:
    """Deterministic single-threaded replay of one session.

    Producer events (unit arrivals) are timestamped by the schedule; consumer
    events advance a decode clock at ``decode_rate`` tokens per second. The
    gate admits reasoning unit k once its aligned input prefix has arrived;
    while the gate is closed the driver logs a wait and advances to the next
    arrival. Teacher-forced mode feeds the layout's scripted reasoning and
    answer tokens; free mode samples, capping each unit at ``max_unit_tokens``
    by forcing a terminator. Raises DeadlockError if the gate is closed and no
    arrivals remain, which canonical alignments never trigger; an explicit
    ``alignment`` override can (and exploratory overrides may want to)."""
    if decode_rate <= 0:
        raise ValueError("decode rate must be positive")
    input_units = layout.input_units()
    if len(schedule.times) != len(input_units):
        raise ValueError(
            f"schedule covers {len(schedule.times)} units, layout has {len(input_units)}"
        )
    if alignment is None:
        alignment = build_alignment(layout) if layout.reasoning_units else AlignmentMap(())
    engine = StreamingEngine(weights, markers)
    engine.fault_slice_offset = fault_slice_offset
    rng = (sampler or SamplerConfig()).make_rng()

    events: list[EngineEvent] = []
    arrivals = list(zip(schedule.times, range(1, len(input_units) + 1)))
    now = 0.0
    step = 1.0 / decode_rate

    def deliver(until: float) -> float:
        """Prefill every unit that has arrived by ``until``; return time of
        last delivery handled."""
        while arrivals and arrivals[0][0] <= until + 1e-12:
            t_arr, idx = arrivals.pop(0)
            unit = input_units[idx - 1]
            engine.prefill_unit([tok.id for tok in unit.tokens])
            events.append(EngineEvent(t_arr, "prefill", idx, len(unit)))
        return until

    deliver(now)
    reasoning_out: list[list[int]] = []
    n_units = len(layout.reasoning_units)
    for k in range(1, n_units + 1):
        required = alignment.last_visible(k)
        while not engine.gate_open(required):
            if not arrivals:
                raise DeadlockError(
                    f"reasoning unit {k} needs {required} input units, "
                    f"only {engine.state.n_eos_seen} will ever arrive"
                )
            t_next = arrivals[0][0]
            events.append(EngineEvent(now, "wait", required, 0))
            now = max(now, t_next)
            deliver(now)
        engine.merge(required)
        events.append(EngineEvent(now, "merge", k, engine.state.merged_visible_len))
        produced: list[int] = []
        if teacher_forced:
            script = [tok.id for tok in layout.reasoning_units[k - 1].tokens]
            for tid in script:
                now += step
                deliver(now)
                engine.decode_step(forced_id=tid)
                events.append(EngineEvent(now, "decode", k, 1))
                produced.append(tid)
        else:
            for j in range(max_unit_tokens):
                forced = None
                if j == max_unit_tokens - 1:
                    forced = markers.eor if k == n_units else markers.eot
                now += step
                deliver(now)
                tok, _ = engine.decode_step(forced_id=forced, sampler=sampler, rng=rng)
                events.append(EngineEvent(now, "decode", k, 1))
                produced.append(tok)
                if markers.kind_of(tok) in (TokenKind.EOT, TokenKind.EOQ, TokenKind.EOR):
                    break
        reasoning_out.append(produced)
        events.append(EngineEvent(now, "split", k, 0))

    # answer phase: needs the full input, then decodes on a fully merged view
    answer_out: list[int] = []
    first_answer_time: float | None = None
    if layout.answer_tokens:
        total_units = len(input_units)
        while engine.state.n_eos_seen < total_units:
            t_next = arrivals[0][0]
            events.append(EngineEvent(now, "wait", total_units, 0))
            now = max(now, t_next)
            deliver(now)
        engine.merge(total_units)
        events.append(EngineEvent(now, "merge", 0, engine.state.merged_visible_len))
        for tok in layout.answer_tokens:
            now += step
            deliver(now)
            tid, _ = engine.decode_step(forced_id=tok.id if teacher_forced else None,
                                        sampler=sampler, rng=rng)
            events.append(EngineEvent(now, "decode", 0, 1))
            if first_answer_time is None:
                first_answer_time = now
            answer_out.append(tid)
        engine.split()
        events.append(EngineEvent(now, "split", 0, 0))
    deliver(float("inf"))  # drain any unconsumed arrivals into the log

    events.sort(key=lambda e: e.t)
    pre = out = None
    if collect_logits:
        if engine.prefill_logits:
            pre = np.concatenate(engine.prefill_logits, axis=0)
        if engine.output_logits:
            out = np.stack(engine.output_logits, axis=0)
    return StreamResult(reasoning_out, answer_out, events, pre, out, first_answer_time, engine)


# ---------------------------------------------------------------------------
# threaded driver (wall-clock smoke harness)
# ---------------------------------------------------------------------------

def run_threaded_decode(
    weights: ModelWeights,
    layout: SegmentLayout,
    schedule: ArrivalSchedule,
    *,
    markers: MarkerVocab = DEFAULT_MARKERS,
    time_scale: float = 0.02,
) -> StreamResult:
    """Producer/consumer threads over the same engine, arrival times scaled to
    wall-clock sleeps. Teacher-forced only. Event timestamps are wall deltas
    and not comparable to the virtual driver; token outputs and final caches
    are."""
    import time

    input_units = layout.input_units()
    alignment = build_alignment(layout) if layout.reasoning_units else AlignmentMap(())
    engine = StreamingEngine(weights, markers)
    events: list[EngineEvent] = []
    t0 = time.monotonic()
    errors: list[BaseException] = []

    def producer() -> None:
        try:
            for idx, unit in enumerate(input_units, start=1):
                delay = schedule.times[idx - 1] * time_scale - (time.monotonic() - t0)
                if delay > 0:
                    time.sleep(delay)
                engine.prefill_unit([tok.id for tok in unit.tokens])
                events.append(EngineEvent(time.monotonic() - t0, "prefill", idx, len(unit)))
        except BaseException as e:  # surfaced by the joiner
            errors.append(e)

    reasoning_out: list[list[int]] = []
    answer_out: list[int] = []

    def consumer() -> None:
        try:
            for k in range(1, len(layout.reasoning_units) + 1):
                required = alignment.last_visible(k)
                with engine.gate_changed:
                    engine.gate_changed.wait_for(lambda: engine.gate_open(required), timeout=30.0)
                if not engine.gate_open(required):
                    raise DeadlockError(f"gate never opened for reasoning unit {k}")
                engine.merge(required)
                events.append(EngineEvent(time.monotonic() - t0, "merge", k, 0))
                produced = []
                for tok in layout.reasoning_units[k - 1].tokens:
                    engine.decode_step(forced_id=tok.id)
                    produced.append(tok.id)
                events.append(EngineEvent(time.monotonic() - t0, "decode", k, len(produced)))
                reasoning_out.append(produced)
                events.append(EngineEvent(time.monotonic() - t0, "split", k, 0))
            if layout.answer_tokens:
                total = len(input_units)
                with engine.gate_changed:
                    engine.gate_changed.wait_for(lambda: engine.gate_open(total), timeout=30.0)
                engine.merge(total)
                for tok in layout.answer_tokens:
                    engine.decode_step(forced_id=tok.id)
                    answer_out.append(tok.id)
                engine.split()
        except BaseException as e:
            errors.append(e)

    tp = threading.Thread(target=producer)
    tc = threading.Thread(target=consumer)
    tp.start(); tc.start()
    tp.join(timeout=60.0); tc.join(timeout=60.0)
    if errors:
        raise errors[0]
    pre = np.concatenate(engine.prefill_logits, axis=0) if engine.prefill_logits else None
    out = np.stack(engine.output_logits, axis=0) if engine.output_logits else None
    return StreamResult(reasoning_out, answer_out, events, pre, out, None, engine)
