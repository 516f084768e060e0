"""Randomized self-checks: engine-vs-oracle equivalence over random sessions.

Each trial builds a random unit layout and a random toy model, replays the
scripted reasoning through the dual-cache engine under a random arrival and
decode rate, then recomputes every logits row with the one-shot masked oracle.
The two routes share only the layer math; cache slicing, gating, and position
bookkeeping are exercised on one side and the mask/position maps on the other,
so an off-by-one in either shows up as a logits deviation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .engine import ArrivalSchedule, batch_oracle_forward, run_streaming_decode
from .layout import (
    DEFAULT_MARKERS,
    InputOrder,
    MarkerVocab,
    SegmentLayout,
    SentenceUnit,
    Token,
    TokenKind,
    skip_unit,
)
from .model import ModelConfig, init_weights


def random_layout(
    rng: np.random.Generator,
    *,
    max_units: int = 6,
    max_unit_tokens: int = 8,
    vocab_size: int = 64,
    markers: MarkerVocab = DEFAULT_MARKERS,
) -> SegmentLayout:
    """Random well-formed session: up to max_units input units of up to
    max_unit_tokens tokens, canonical reasoning (one step per context
    sentence, optional question interpretation, optional chain tail, some
    steps skipped), and a short answer."""
    free = [i for i in range(vocab_size) if i not in markers.reserved_ids]

    def body(lo: int, hi: int) -> tuple[Token, ...]:
        n = int(rng.integers(lo, hi + 1))
        return tuple(Token(int(rng.choice(free))) for _ in range(n))

    n_units = int(rng.integers(1, max_units + 1))
    nq = int(rng.integers(0, 2)) if n_units > 1 else int(rng.integers(0, 2))
    nq = min(nq, n_units)
    nc = n_units - nq
    order = InputOrder.QUESTION_FIRST if rng.random() < 0.5 else InputOrder.CONTEXT_FIRST

    question = tuple(
        SentenceUnit(i, body(1, max_unit_tokens - 1) + (markers.token(TokenKind.EOQ),))
        for i in range(1, nq + 1)
    )
    context = tuple(
        SentenceUnit(i, body(1, max_unit_tokens - 1) + (markers.token(TokenKind.EOS),))
        for i in range(1, nc + 1)
    )

    parts: list[tuple[Token, ...]] = []
    interp = nq >= 1 and rng.random() < 0.7
    steps = []
    for _ in range(nc):
        if rng.random() < 0.2:
            steps.append(skip_unit(1, markers).tokens)
        else:
            steps.append(body(1, 5) + (markers.token(TokenKind.EOT),))
    tail = rng.random() < 0.5 or (nc == 0)
    interp_tokens = body(1, 3) + (markers.token(TokenKind.EOQ),) if interp else None
    tail_tokens = body(1, 6) + (markers.token(TokenKind.EOR),) if tail else None
    if order == InputOrder.QUESTION_FIRST:
        if interp_tokens:
            parts.append(interp_tokens)
        parts.extend(steps)
    else:
        parts.extend(steps)
        if interp_tokens:
            parts.append(interp_tokens)
    if tail_tokens:
        parts.append(tail_tokens)
    reasoning = tuple(SentenceUnit(i, toks) for i, toks in enumerate(parts, start=1))

    answer = body(1, 4) if rng.random() < 0.75 else ()
    return SegmentLayout(
        question_units=question,
        context_units=context,
        order=order,
        reasoning_units=reasoning,
        answer_tokens=answer,
    )


@dataclass(frozen=True)
class EquivalenceResult:
    seed: int
    max_abs_dev: float
    rows_compared: int


@dataclass(frozen=True)
class EquivalenceReport:
    results: tuple[EquivalenceResult, ...]
    tolerance: float
    max_abs_dev: float
    ok: bool

    def to_json(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "max_abs_dev": self.max_abs_dev,
            "ok": self.ok,
            "trials": [
                {"seed": r.seed, "max_abs_dev": r.max_abs_dev, "rows": r.rows_compared}
                for r in self.results
            ],
        }


def equivalence_run(
    seed: int,
    model_config: ModelConfig | None = None,
    *,
    fault_slice_offset: int = 0,
    markers: MarkerVocab = DEFAULT_MARKERS,
) -> EquivalenceResult:
    """One trial: streamed teacher-forced decode vs the batch oracle."""
    cfg = model_config or ModelConfig()
    cfg = replace(cfg, seed=1000 + seed)
    rng = np.random.default_rng(seed)
    layout = random_layout(rng, vocab_size=cfg.vocab_size, markers=markers)
    weights = init_weights(cfg)
    arr_rate = float(rng.uniform(2.0, 20.0))
    decode_rate = float(rng.uniform(5.0, 50.0))
    unit_lens = [len(u) for u in layout.input_units()]
    if fault_slice_offset != 0:
        # lazy arrivals leave nothing past the merge boundary in cache, so a
        # positive offset would clamp to a no-op and hide the injected fault
        schedule = ArrivalSchedule.immediate(len(unit_lens))
    else:
        schedule = ArrivalSchedule.from_rate(unit_lens, arr_rate)
    res = run_streaming_decode(
        weights, layout, schedule, decode_rate,
        markers=markers, fault_slice_offset=fault_slice_offset,
    )
    oracle = batch_oracle_forward(weights, layout)
    n_in = layout.n_input_tokens
    dev = float(np.max(np.abs(res.prefill_logits - oracle[:n_in])))
    rows = n_in
    if res.output_logits is not None and len(res.output_logits):
        dev = max(dev, float(np.max(np.abs(res.output_logits - oracle[n_in:]))))
        rows += res.output_logits.shape[0]
    return EquivalenceResult(seed, dev, rows)


def equivalence_suite(
    n_seeds: int = 20,
    base_seed: int = 0,
    tolerance: float = 1e-5,
    model_config: ModelConfig | None = None,
    *,
    fault_slice_offset: int = 0,
) -> EquivalenceReport:
    results = tuple(
        equivalence_run(base_seed + k, model_config, fault_slice_offset=fault_slice_offset)
        for k in range(n_seeds)
    )
    worst = max(r.max_abs_dev for r in results)
    ok = worst <= tolerance and all(r.rows_compared > 0 for r in results)
    return EquivalenceReport(results, tolerance, worst, ok)


def rope_shift_invariance(trials: int, seed: int, head_dim: int = 16) -> float:
    """Max deviation of rotary scores under a shared position shift, plus the
    zero-position identity, over random vectors. Returns the worst deviation."""
    from .rope import RotaryConfig, attention_score, rotate

    rng = np.random.default_rng(seed)
    cfg = RotaryConfig(head_dim=head_dim)
    worst = 0.0
    for _ in range(trials):
        q = rng.standard_normal(head_dim).astype(np.float32)
        k = rng.standard_normal(head_dim).astype(np.float32)
        pq = int(rng.integers(0, 512))
        pk = int(rng.integers(0, 512))
        shift = int(rng.integers(0, 512))
        base = attention_score(q, k, pq, pk, cfg)
        moved = attention_score(q, k, pq + shift, pk + shift, cfg)
        worst = max(worst, abs(base - moved))
        ident = float(np.max(np.abs(rotate(q, 0, cfg) - q)))
        worst = max(worst, ident)
    return worst
