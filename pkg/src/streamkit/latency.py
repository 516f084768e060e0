"""Latency simulation for three serving paradigms over sentence-streamed input.

Input tokens arrive at a fixed spoken rate; decode emits tokens at a fixed
rate; prefill is free. Three paradigms: batch (read everything, then reason,
then answer), interleaved (reason after each sentence while arrival stalls),
and streaming (reason after each sentence while arrival continues, gated so
step k never starts before sentence k has fully arrived).

Two scalars summarize a run. TTFT counts the input tokens that must be
observed before any reasoning may start: the whole input for batch, the first
unit for the other two. Delay is the time from the natural end of input
arrival to the emission of the first answer token; emission completes one
decode slot, so a paradigm with n pre-answer tokens left at input-end shows a
delay of (n + 1) / decode_rate. Delay is measured against the unstalled
arrival clock even for the interleaved paradigm, which stretches its own
reading; that choice keeps the three paradigms on one axis.

The streaming best case (depth 1) keeps a small residual: the last step's
remainder plus the direct-answer tail plus one answer slot. It cannot reach
zero. Note also that streaming delay under this definition can grow when
arrival gets faster, because less decode work overlaps the arrival window;
what is monotone is delay in decode rate and total time-to-first-answer in
arrival rate, and the tests assert exactly that.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Iterable, Mapping

from .layout import DepthLevel, SegmentLayout, TokenKind


@dataclass(frozen=True)
class ArrivalModel:
    """Spoken-input arrival: words per minute times tokens per word."""

    words_per_minute: float = 150.0
    tokens_per_word: float = 1.3

    def __post_init__(self) -> None:
        if self.words_per_minute <= 0 or self.tokens_per_word <= 0:
            raise ValueError("arrival parameters must be positive")

    @property
    def tokens_per_second(self) -> float:
        return self.words_per_minute * self.tokens_per_word / 60.0


@dataclass(frozen=True)
class DecodeModel:
    tokens_per_second: float = 30.0

    def __post_init__(self) -> None:
        if self.tokens_per_second <= 0:
            raise ValueError("decode rate must be positive")


class ParadigmKind(Enum):
    BATCH = "batch"
    INTERLEAVED = "interleaved"
    STREAMING = "streaming"


@dataclass(frozen=True)
class TailTokens:
    """Pre-answer tail length per depth level (tokens after the streamed
    steps: nothing extra beyond the direct-answer cue for depth 1, a global
    pass for depth 2, global plus reflection for depth 3)."""

    d1: float = 8.0
    d2: float = 48.0
    d3: float = 96.0

    def for_depth(self, depth: DepthLevel) -> float:
        return {DepthLevel.D1_DIRECT: self.d1,
                DepthLevel.D2_GLOBAL: self.d2,
                DepthLevel.D3_REFLECT: self.d3}[depth]


@dataclass(frozen=True)
class StreamProfile:
    """Token counts driving the simulation. Reasoning unit k is gated on the
    arrival of input unit k (canonical one-to-one alignment); counts may be
    fractional when they are averages over a dataset."""

    input_unit_tokens: tuple[float, ...]
    reasoning_unit_tokens: tuple[float, ...]
    tails: TailTokens = TailTokens()
    batch_reasoning_tokens: float | None = None
    answer_tokens: float = 1.0

    def __post_init__(self) -> None:
        if not self.input_unit_tokens:
            raise ValueError("profile needs at least one input unit")
        if any(t <= 0 for t in self.input_unit_tokens):
            raise ValueError("input unit token counts must be positive")
        if any(t < 0 for t in self.reasoning_unit_tokens):
            raise ValueError("reasoning token counts must be nonnegative")
        if len(self.reasoning_unit_tokens) > len(self.input_unit_tokens):
            raise ValueError("more reasoning units than input units cannot be gated")

    @property
    def total_input_tokens(self) -> float:
        return float(sum(self.input_unit_tokens))

    def batch_pre_answer(self, depth: DepthLevel) -> float:
        if self.batch_reasoning_tokens is not None:
            return self.batch_reasoning_tokens
        return float(sum(self.reasoning_unit_tokens)) + self.tails.for_depth(depth)

    @classmethod
    def from_layout(cls, layout: SegmentLayout, tails: TailTokens | None = None) -> "StreamProfile":
        """Profile of one concrete session. The chain-tail unit (the one closed
        by the chain-end marker) waits for the full input, so it is timed as
        the tail, not as a gated unit; when present, its recorded length
        replaces the default tail budget at every depth."""
        gated = [u for u in layout.reasoning_units if u.terminator != TokenKind.EOR]
        chain_tail = [u for u in layout.reasoning_units if u.terminator == TokenKind.EOR]
        if tails is None:
            if chain_tail:
                n = float(sum(len(u) for u in chain_tail))
                tails = TailTokens(d1=n, d2=n, d3=n)
            else:
                tails = TailTokens()
        return cls(
            input_unit_tokens=tuple(float(len(u)) for u in layout.input_units()),
            reasoning_unit_tokens=tuple(float(len(u)) for u in gated),
            tails=tails,
            answer_tokens=float(max(len(layout.answer_tokens), 1)),
        )


@dataclass(frozen=True)
class TimelineSegment:
    t0: float
    t1: float
    lane: str   # arrival | reasoning | tail | answer | wait
    label: str


@dataclass(frozen=True)
class LatencyReport:
    paradigm: ParadigmKind
    depth: DepthLevel
    ttft_tokens: float
    first_answer_delay_s: float
    input_end_natural_s: float
    first_answer_at_s: float
    timeline: tuple[TimelineSegment, ...]

    def to_json(self) -> dict:
        return {
            "paradigm": self.paradigm.value,
            "depth": self.depth.value,
            "ttft_tokens": self.ttft_tokens,
            "first_answer_delay_s": self.first_answer_delay_s,
            "input_end_natural_s": self.input_end_natural_s,
            "first_answer_at_s": self.first_answer_at_s,
            "timeline": [
                {"t0": s.t0, "t1": s.t1, "lane": s.lane, "label": s.label}
                for s in self.timeline
            ],
        }


def ttft_tokens(profile: StreamProfile, kind: ParadigmKind) -> float:
    """Input tokens observed before reasoning may begin."""
    if kind == ParadigmKind.BATCH:
        return profile.total_input_tokens
    return float(profile.input_unit_tokens[0])


def simulate(
    profile: StreamProfile,
    kind: ParadigmKind,
    depth: DepthLevel = DepthLevel.D3_REFLECT,
    arrival: ArrivalModel = ArrivalModel(),
    decode: DecodeModel = DecodeModel(),
    *,
    interleaved_blocking: str = "strict",
) -> LatencyReport:
    """Run one paradigm to its first answer token.

    interleaved_blocking: "strict" stalls the arrival of unit k+1 until
    reasoning k is done (the default), "buffered" lets arrivals continue and
    only serializes the reasoning itself."""
    arr = arrival.tokens_per_second
    rate = decode.tokens_per_second
    a_dur = [n / arr for n in profile.input_unit_tokens]
    natural_ends = _cumsum(a_dur)
    natural_end = natural_ends[-1]
    tail = profile.tails.for_depth(depth)
    segs: list[TimelineSegment] = []

    if kind == ParadigmKind.BATCH:
        t = 0.0
        for i, d in enumerate(a_dur, start=1):
            segs.append(TimelineSegment(t, t + d, "arrival", f"unit {i}"))
            t += d
        pre = profile.batch_pre_answer(depth)
        segs.append(TimelineSegment(natural_end, natural_end + pre / rate, "reasoning", "full chain"))
        first = natural_end + (pre + 1.0) / rate
        segs.append(TimelineSegment(natural_end + pre / rate, first, "answer", "first token"))
        return _report(kind, depth, profile, first, natural_end, segs)

    if kind == ParadigmKind.INTERLEAVED and interleaved_blocking == "strict":
        t = 0.0
        r_end = 0.0
        for k, d in enumerate(a_dur, start=1):
            segs.append(TimelineSegment(t, t + d, "arrival", f"unit {k}"))
            t += d
            r = profile.reasoning_unit_tokens[k - 1] if k <= len(profile.reasoning_unit_tokens) else 0.0
            if r > 0:
                segs.append(TimelineSegment(t, t + r / rate, "reasoning", f"step {k}"))
                t += r / rate
            r_end = t
        first = _finish_tail(segs, r_end, natural_end, tail, rate, wait_for_input=False)
        return _report(kind, depth, profile, first, natural_end, segs)

    if kind not in (ParadigmKind.STREAMING, ParadigmKind.INTERLEAVED):
        raise ValueError(f"unknown paradigm {kind}")
    if kind == ParadigmKind.INTERLEAVED and interleaved_blocking != "buffered":
        raise ValueError(f"unknown interleaved_blocking mode {interleaved_blocking!r}")

    # streaming, and the buffered interleaved variant: natural arrivals,
    # reasoning step k starts at max(arrival end k, previous step end)
    t = 0.0
    for i, d in enumerate(a_dur, start=1):
        segs.append(TimelineSegment(t, t + d, "arrival", f"unit {i}"))
        t += d
    r_end = 0.0
    for k, r in enumerate(profile.reasoning_unit_tokens, start=1):
        start = max(natural_ends[k - 1], r_end)
        if start > r_end and r_end > 0.0:
            segs.append(TimelineSegment(r_end, start, "wait", f"gate {k}"))
        if r > 0:
            segs.append(TimelineSegment(start, start + r / rate, "reasoning", f"step {k}"))
        r_end = start + r / rate
    first = _finish_tail(segs, r_end, natural_end, tail, rate, wait_for_input=True)
    return _report(kind, depth, profile, first, natural_end, segs)


def _finish_tail(
    segs: list[TimelineSegment],
    r_end: float,
    natural_end: float,
    tail: float,
    rate: float,
    wait_for_input: bool,
) -> float:
    start = max(r_end, natural_end) if wait_for_input else r_end
    if start > r_end:
        segs.append(TimelineSegment(r_end, start, "wait", "gate tail"))
    if tail > 0:
        segs.append(TimelineSegment(start, start + tail / rate, "tail", "depth tail"))
    first = start + (tail + 1.0) / rate
    segs.append(TimelineSegment(start + tail / rate, first, "answer", "first token"))
    return first


def _report(
    kind: ParadigmKind,
    depth: DepthLevel,
    profile: StreamProfile,
    first: float,
    natural_end: float,
    segs: list[TimelineSegment],
) -> LatencyReport:
    return LatencyReport(
        paradigm=kind,
        depth=depth,
        ttft_tokens=ttft_tokens(profile, kind),
        first_answer_delay_s=first - natural_end,
        input_end_natural_s=natural_end,
        first_answer_at_s=first,
        timeline=tuple(segs),
    )


def _cumsum(xs: Iterable[float]) -> list[float]:
    out, acc = [], 0.0
    for x in xs:
        acc += x
        out.append(acc)
    return out


def fit_decode_rate(pre_answer_tokens: float, observed_delay_s: float) -> float:
    """Decode rate implied by a batch-paradigm measurement: pre-answer tokens
    over observed delay. The simulator then charges one extra slot for the
    answer token itself, leaving a small one-slot residual on the round trip
    (checked at 2e-3 relative in the tests)."""
    if pre_answer_tokens <= 0 or observed_delay_s <= 0:
        raise ValueError("fit needs positive token count and delay")
    return pre_answer_tokens / observed_delay_s


# ---------------------------------------------------------------------------
# comparisons
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    paradigm: ParadigmKind
    depth: DepthLevel
    ttft_tokens: float
    delay_s: float
    ttft_reduction_pct: float | None
    delay_reduction_pct: float | None


@dataclass(frozen=True)
class ComparisonTable:
    label: str
    rows: tuple[ComparisonRow, ...]

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "rows": [
                {
                    "paradigm": r.paradigm.value,
                    "depth": r.depth.value,
                    "ttft_tokens": r.ttft_tokens,
                    "delay_s": r.delay_s,
                    "ttft_reduction_pct": r.ttft_reduction_pct,
                    "delay_reduction_pct": r.delay_reduction_pct,
                }
                for r in self.rows
            ],
        }

    def to_markdown(self) -> str:
        lines = [
            f"### {self.label}",
            "",
            "| paradigm | depth | ttft (tokens) | delay (s) | ttft cut | delay cut |",
            "|---|---|---:|---:|---:|---:|",
        ]
        for r in self.rows:
            cut_t = f"{r.ttft_reduction_pct:.1f}%" if r.ttft_reduction_pct is not None else "-"
            cut_d = f"{r.delay_reduction_pct:.1f}%" if r.delay_reduction_pct is not None else "-"
            lines.append(
                f"| {r.paradigm.value} | {r.depth.value} | {r.ttft_tokens:.2f} "
                f"| {r.delay_s:.3f} | {cut_t} | {cut_d} |"
            )
        return "\n".join(lines)

    def to_csv_rows(self) -> list[list[str]]:
        head = ["paradigm", "depth", "ttft_tokens", "delay_s", "ttft_reduction_pct", "delay_reduction_pct"]
        body = [
            [r.paradigm.value, r.depth.value, f"{r.ttft_tokens:.4f}", f"{r.delay_s:.6f}",
             "" if r.ttft_reduction_pct is None else f"{r.ttft_reduction_pct:.4f}",
             "" if r.delay_reduction_pct is None else f"{r.delay_reduction_pct:.4f}"]
            for r in self.rows
        ]
        return [head] + body


def compare(
    profile: StreamProfile,
    arrival: ArrivalModel = ArrivalModel(),
    decode: DecodeModel = DecodeModel(),
    depths: tuple[DepthLevel, ...] = (DepthLevel.D1_DIRECT, DepthLevel.D2_GLOBAL, DepthLevel.D3_REFLECT),
    label: str = "latency comparison",
) -> ComparisonTable:
    """Batch baseline plus every (paradigm, depth) pair, with percent
    reductions against the batch row of the same depth."""
    rows: list[ComparisonRow] = []
    batch: dict[DepthLevel, LatencyReport] = {}
    for depth in depths:
        batch[depth] = simulate(profile, ParadigmKind.BATCH, depth, arrival, decode)
    rows.append(ComparisonRow(
        ParadigmKind.BATCH, depths[-1],
        batch[depths[-1]].ttft_tokens, batch[depths[-1]].first_answer_delay_s, None, None,
    ))
    for kind in (ParadigmKind.INTERLEAVED, ParadigmKind.STREAMING):
        for depth in depths:
            rep = simulate(profile, kind, depth, arrival, decode)
            base = batch[depth]
            rows.append(ComparisonRow(
                kind, depth, rep.ttft_tokens, rep.first_answer_delay_s,
                _pct(base.ttft_tokens, rep.ttft_tokens),
                _pct(base.first_answer_delay_s, rep.first_answer_delay_s),
            ))
    return ComparisonTable(label, tuple(rows))


def _pct(base: float, new: float) -> float | None:
    if base <= 0:
        return None
    return (1.0 - new / base) * 100.0


# ---------------------------------------------------------------------------
# bundled reference replay
# ---------------------------------------------------------------------------

def load_reference_data() -> dict:
    """Bundled reference latency measurements: six dialog-reasoning datasets,
    token-count profiles, and the observed per-paradigm timings they were
    derived from."""
    text = resources.files("streamkit.replay").joinpath("reference_latency.json").read_text()
    return json.loads(text)


def reference_profile(entry: Mapping) -> StreamProfile:
    p = entry["profile"]
    return StreamProfile(
        input_unit_tokens=tuple(p["input_unit_tokens"]),
        reasoning_unit_tokens=tuple(p["reasoning_unit_tokens"]),
        tails=TailTokens(**p["tail_tokens"]),
        batch_reasoning_tokens=p["batch_reasoning_tokens"],
        answer_tokens=p.get("answer_tokens", 1.0),
    )


def replay_ttft_reductions() -> dict[str, float]:
    """Percent TTFT reduction (streaming vs batch) per reference dataset."""
    data = load_reference_data()
    out = {}
    for entry in data["datasets"]:
        b = entry["ttft_tokens"]["batch"]
        s = entry["ttft_tokens"]["streaming"]
        out[entry["name"]] = (1.0 - s / b) * 100.0
    return out
