"""Trace quality pipeline: structural and semantic checks plus depth control.

Granularity is the exact ratio of input sentence terminators to reasoning step
terminators (1.0 means one step per sentence). Consistency embeds each input
sentence and its collapsed reasoning segment and takes the cosine per pair.
Candidate traces get up to two generation attempts; depth control appends one
of three fixed cue templates to a finished trace."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Callable, Iterable, Sequence

import numpy as np

from .layout import (
    AlignmentMap,
    DepthLevel,
    MARKER_TEXT,
    SegmentLayout,
    SentenceUnit,
    Token,
    TokenKind,
    build_alignment,
)
from .providers import EmbeddingProvider, cosine_rows


@dataclass(frozen=True)
class QualityThresholds:
    """Config, not constants: target band for granularity and the per-pair
    consistency floor. Skip segments and the question pair are excluded from
    consistency scoring unless the flags say otherwise; skips always count in
    granularity (they end with a step terminator)."""

    granularity_target: float = 1.0
    granularity_tol: float = 0.0
    consistency_min: float = 0.5
    include_skips: bool = False
    include_question_pair: bool = False


def granularity_score(input_tokens: Iterable[Token], reasoning_tokens: Iterable[Token]) -> float:
    """Sentence terminators over step terminators, as an exact count ratio.
    Question and chain-final terminators belong to neither count."""
    n_sent = sum(1 for t in input_tokens if t.kind == TokenKind.EOS)
    n_step = sum(1 for t in reasoning_tokens if t.kind == TokenKind.EOT)
    if n_step == 0:
        raise ValueError("granularity undefined: no step terminators in the reasoning stream")
    return n_sent / n_step


def granularity_of(layout: SegmentLayout) -> float:
    return granularity_score(layout.input_tokens(), layout.reasoning_tokens())


@dataclass(frozen=True)
class CollapsedSegment:
    """All reasoning units aligned to one input unit, joined in order."""

    input_unit: int  # arrival-order index, 1-based
    text: str
    is_skip: bool
    is_question: bool
    unit_indices: tuple[int, ...]


def collapse_reasoning_segments(
    layout: SegmentLayout, alignment: AlignmentMap | None = None
) -> list[CollapsedSegment]:
    """Group step and interpretation units by their aligned input unit. The
    chain-final unit aligns to the whole input, not one sentence, and is left
    out of the pairing."""
    if alignment is None:
        alignment = build_alignment(layout)
    grouped: dict[int, list[SentenceUnit]] = {}
    for t, unit in enumerate(layout.reasoning_units, start=1):
        if unit.terminator == TokenKind.EOR:
            continue
        grouped.setdefault(alignment.last_visible(t), []).append(unit)
    out = []
    for input_unit in sorted(grouped):
        units = grouped[input_unit]
        out.append(CollapsedSegment(
            input_unit=input_unit,
            text=" ".join(u.text for u in units),
            is_skip=all(u.is_skip for u in units),
            is_question=any(u.terminator == TokenKind.EOQ for u in units),
            unit_indices=tuple(u.index for u in units),
        ))
    return out


@dataclass(frozen=True)
class PairScore:
    input_unit: int
    score: float
    is_skip: bool
    is_question: bool


def consistency_scores(
    layout: SegmentLayout,
    provider: EmbeddingProvider,
    alignment: AlignmentMap | None = None,
) -> list[PairScore]:
    """Cosine between each input sentence and its collapsed reasoning segment.
    One batched embed call covers both sides."""
    segments = collapse_reasoning_segments(layout, alignment)
    if not segments:
        return []
    inputs = layout.input_units()
    left = [inputs[s.input_unit - 1].text for s in segments]
    right = [s.text for s in segments]
    vecs = np.asarray(provider.embed(left + right), dtype=np.float64)
    sims = cosine_rows(vecs[: len(left)], vecs[len(left):])
    return [
        PairScore(s.input_unit, float(sim), s.is_skip, s.is_question)
        for s, sim in zip(segments, sims)
    ]


@dataclass(frozen=True)
class QualityReport:
    granularity: float
    pair_scores: tuple[PairScore, ...]
    mean_consistency: float
    passed: bool
    failures: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "granularity": self.granularity,
            "pair_scores": [
                {"input_unit": p.input_unit, "score": p.score,
                 "is_skip": p.is_skip, "is_question": p.is_question}
                for p in self.pair_scores
            ],
            "mean_consistency": self.mean_consistency,
            "passed": self.passed,
            "failures": list(self.failures),
        }


def evaluate(
    layout: SegmentLayout,
    provider: EmbeddingProvider,
    thresholds: QualityThresholds = QualityThresholds(),
) -> QualityReport:
    """Full quality check of one trace against the thresholds."""
    failures: list[str] = []
    granularity = granularity_of(layout)
    lo = thresholds.granularity_target - thresholds.granularity_tol
    hi = thresholds.granularity_target + thresholds.granularity_tol
    if not lo <= granularity <= hi:
        failures.append(f"granularity {granularity:.4f} outside [{lo:.4f}, {hi:.4f}]")
    pairs = consistency_scores(layout, provider)
    included = [
        p for p in pairs
        if (thresholds.include_skips or not p.is_skip)
        and (thresholds.include_question_pair or not p.is_question)
    ]
    for p in included:
        if p.score < thresholds.consistency_min:
            failures.append(
                f"input unit {p.input_unit}: consistency {p.score:.4f} < {thresholds.consistency_min}"
            )
    mean = float(np.mean([p.score for p in included])) if included else 0.0
    return QualityReport(granularity, tuple(pairs), mean, not failures, tuple(failures))


# ---------------------------------------------------------------------------
# two-attempt filtering
# ---------------------------------------------------------------------------

MAX_ATTEMPTS = 2


@dataclass(frozen=True)
class PassAt2Result:
    accepted: object | None
    attempts: int
    reports: tuple[QualityReport | None, ...]
    errors: tuple[str, ...]

    @property
    def discarded(self) -> bool:
        return self.accepted is None


def pass_at_2_filter(
    make_attempt: Callable[[int], object],
    check: Callable[[object], QualityReport],
) -> PassAt2Result:
    """Generate, check, and accept or retry once. A raising callback counts as
    a failed attempt. The generator is called at most twice, structurally."""
    reports: list[QualityReport | None] = []
    errors: list[str] = []
    for attempt in range(1, MAX_ATTEMPTS + 1):
        try:
            candidate = make_attempt(attempt)
        except Exception as e:
            reports.append(None)
            errors.append(f"attempt {attempt}: generation failed: {e}")
            continue
        try:
            report = check(candidate)
        except Exception as e:
            reports.append(None)
            errors.append(f"attempt {attempt}: evaluation failed: {e}")
            continue
        reports.append(report)
        if report.passed:
            return PassAt2Result(candidate, attempt, tuple(reports), tuple(errors))
    return PassAt2Result(None, MAX_ATTEMPTS, tuple(reports), tuple(errors))


# ---------------------------------------------------------------------------
# depth control
# ---------------------------------------------------------------------------

_TEMPLATE_CACHE: dict[str, str] = {}


def load_template(name: str) -> str:
    if name not in _TEMPLATE_CACHE:
        _TEMPLATE_CACHE[name] = (
            resources.files("streamkit.templates").joinpath(name).read_text(encoding="utf-8")
        )
    return _TEMPLATE_CACHE[name]


def depth_intervention(trace_text: str, depth: DepthLevel, global_text: str | None = None) -> str:
    """Append the fixed depth cue to a finished trace. The two shallow depths
    glue with a period and a space; the deep variant splices the provided
    global pass into its template verbatim (and requires it)."""
    if depth == DepthLevel.D1_DIRECT:
        return f"{trace_text}. {load_template('intervention_d1.txt')}"
    if depth == DepthLevel.D2_GLOBAL:
        return f"{trace_text}. {load_template('intervention_d2.txt')}"
    if global_text is None:
        raise ValueError("deep reflection needs the global pass text")
    return trace_text + load_template("intervention_d3.txt").replace("{global_thinking}", global_text)


# ---------------------------------------------------------------------------
# similarity map and prompt assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimilarityMap:
    matrix: np.ndarray  # (n input units, n collapsed segments)
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]


def similarity_map(
    layout: SegmentLayout, provider: EmbeddingProvider, alignment: AlignmentMap | None = None
) -> SimilarityMap:
    """Full cosine grid between every input sentence and every collapsed
    reasoning segment. The aligned diagonal should dominate on a good trace."""
    segments = collapse_reasoning_segments(layout, alignment)
    inputs = layout.input_units()
    left = [u.text for u in inputs]
    right = [s.text for s in segments]
    if not right:
        return SimilarityMap(np.zeros((len(left), 0)), tuple(
            f"in {i}" for i in range(1, len(left) + 1)
        ), ())
    vecs = np.asarray(provider.embed(left + right), dtype=np.float64)
    a, b = vecs[: len(left)], vecs[len(left):]
    norms_a = np.linalg.norm(a, axis=1, keepdims=True)
    norms_b = np.linalg.norm(b, axis=1, keepdims=True)
    a = np.where(norms_a > 0, a / np.where(norms_a > 0, norms_a, 1.0), a)
    b = np.where(norms_b > 0, b / np.where(norms_b > 0, norms_b, 1.0), b)
    return SimilarityMap(
        a @ b.T,
        tuple(f"in {i}" for i in range(1, len(left) + 1)),
        tuple(f"seg {s.input_unit}" for s in segments),
    )


def marked_stream_text(units: Sequence[SentenceUnit], terminator: TokenKind) -> str:
    """Render units as plain text with inline boundary markers, the shape the
    generation prompt expects."""
    marker = MARKER_TEXT[terminator]
    return " ".join(f"{u.text} {marker}" for u in units)


def generation_prompt(layout: SegmentLayout, example: str = "") -> str:
    question = marked_stream_text(layout.question_units, TokenKind.EOQ)
    context = marked_stream_text(layout.context_units, TokenKind.EOS)
    return (
        load_template("generation_instruct.txt")
        .replace("{question}", question)
        .replace("{context}", context)
        .replace("{example}", example)
    )


def reconstruction_prompt(layout: SegmentLayout, reasoning_text: str, example: str = "") -> str:
    question = marked_stream_text(layout.question_units, TokenKind.EOQ)
    context = marked_stream_text(layout.context_units, TokenKind.EOS)
    return (
        load_template("teacher_reconstruct.txt")
        .replace("{question}", question)
        .replace("{context}", context)
        .replace("{reasoning}", reasoning_text)
        .replace("{example}", example)
    )
