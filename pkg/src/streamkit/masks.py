"""Additive attention masks for sentence-streamed decoding.

Three modes: plain causal; a literal index-rule form defined over one input
span of T tokens followed by L reasoning tokens; and a segment-level form
driven by a unit alignment, which is the shape the decode engine actually
enforces. Masks are additive: 0 keeps a cell, a large negative sentinel kills
it. The default sentinel is -1e9, chosen so that float32 softmax underflows
masked cells to exactly 0 after the row-max shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .layout import AlignmentMap, SegmentLayout

NEG_INF = -1.0e9


class MaskMode(Enum):
    CAUSAL = "causal"
    STREAMING_LITERAL = "literal"
    STREAMING_SEGMENT = "segment"


@dataclass(frozen=True)
class MaskMatrix:
    """Square additive mask. Cells are exactly 0 (visible) or the sentinel
    (masked). Row/column indices in the public API are 1-based."""

    data: np.ndarray
    sentinel: float = NEG_INF

    def __post_init__(self) -> None:
        d = self.data
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError(f"mask must be square, got shape {d.shape}")
        if d.shape[0] == 0:
            raise ValueError("mask must be nonempty")
        if not np.all((d == 0.0) | (d == self.sentinel)):
            raise ValueError("mask cells must be exactly 0 or the sentinel")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def is_visible(self, i: int, j: int) -> bool:
        self._check_row(i)
        self._check_row(j)
        return bool(self.data[i - 1, j - 1] == 0.0)

    def to_grid(self) -> str:
        """Text rendering, one row per line: '.' visible, '#' masked."""
        rows = []
        for r in range(self.n):
            rows.append("".join("." if self.data[r, c] == 0.0 else "#" for c in range(self.n)))
        return "\n".join(rows)

    def _check_row(self, i: int) -> None:
        if not 1 <= i <= self.n:
            raise ValueError(f"index {i} out of range 1..{self.n}")


def visible_set(mask: MaskMatrix, i: int) -> tuple[int, ...]:
    """1-based columns visible from row i."""
    mask._check_row(i)
    cols = np.nonzero(mask.data[i - 1] == 0.0)[0] + 1
    return tuple(int(c) for c in cols)


def causal_mask(n: int, sentinel: float = NEG_INF) -> MaskMatrix:
    if n < 1:
        raise ValueError(f"mask size must be >= 1, got {n}")
    data = np.where(np.arange(n)[None, :] > np.arange(n)[:, None], sentinel, 0.0)
    return MaskMatrix(data.astype(np.float32), sentinel)


def streaming_mask_literal(T: int, L: int, sentinel: float = NEG_INF) -> MaskMatrix:
    """Causal mask over T input tokens + L reasoning tokens, with the streaming
    band removed by the literal index rule (1-based): a cell (i, j) is
    additionally masked iff  i > T  and  j < T  and  j > i - T + 1.

    The rule is applied exactly as stated, including its edge behavior: column
    T is never touched, and the masked band shrinks as i grows."""
    if T < 1:
        raise ValueError(f"input span must be >= 1 token, got {T}")
    if L < 0:
        raise ValueError(f"reasoning span must be >= 0 tokens, got {L}")
    n = T + L
    base = causal_mask(n, sentinel).data.copy()
    i = np.arange(1, n + 1)[:, None]
    j = np.arange(1, n + 1)[None, :]
    band = (i > T) & (j < T) & (j > i - T + 1)
    base[band] = sentinel
    return MaskMatrix(base, sentinel)


# ---------------------------------------------------------------------------
# segment-level mask
# ---------------------------------------------------------------------------

def segment_visible_columns(
    layout: SegmentLayout, alignment: AlignmentMap, row: int
) -> tuple[int, ...]:
    """Visible 1-based columns for one row of the segment-level mask, computed
    without materializing the matrix. Input rows are causal; a reasoning row in
    unit t sees the input-token prefix of its aligned units plus all earlier
    reasoning tokens and itself; answer rows see everything up to themselves."""
    n_in = layout.n_input_tokens
    spans = layout.reasoning_unit_spans()
    a_start, a_end = layout.answer_span()
    total = a_end
    if not 1 <= row <= total:
        raise ValueError(f"row {row} out of range 1..{total}")
    r0 = row - 1  # 0-based
    if r0 < n_in or r0 >= a_start:
        return tuple(range(1, row + 1))
    for t, (s, e) in enumerate(spans, start=1):
        if s <= r0 < e:
            prefix_units = alignment.last_visible(t)
            in_spans = layout.input_unit_spans()
            prefix_end = in_spans[prefix_units - 1][1]
            return tuple(range(1, prefix_end + 1)) + tuple(range(n_in + 1, row + 1))
    raise AssertionError("row classification failed")  # pragma: no cover


def streaming_mask_segment(
    layout: SegmentLayout,
    alignment: AlignmentMap | None = None,
    sentinel: float = NEG_INF,
) -> MaskMatrix:
    """Materialized segment-level mask for a full layout (input units in
    arrival order, then reasoning units, then answer tokens)."""
    from .layout import build_alignment

    if alignment is None:
        # nothing to gate without reasoning units, the mask is plain causal
        alignment = AlignmentMap(()) if not layout.reasoning_units else build_alignment(layout)
    if len(alignment) != len(layout.reasoning_units):
        raise ValueError(
            f"alignment covers {len(alignment)} units, layout has {len(layout.reasoning_units)}"
        )
    n = layout.answer_span()[1]
    if n < 1:
        raise ValueError("layout has no tokens")
    base = causal_mask(n, sentinel).data.copy()
    n_in = layout.n_input_tokens
    in_spans = layout.input_unit_spans()
    for t, (s, e) in enumerate(layout.reasoning_unit_spans(), start=1):
        prefix_end = in_spans[alignment.last_visible(t) - 1][1]
        base[s:e, prefix_end:n_in] = sentinel
    return MaskMatrix(base, sentinel)


# ---------------------------------------------------------------------------
# literal vs segment comparison harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RowDelta:
    """Difference in visible input columns for one reasoning row: columns the
    literal rule keeps that the segment mask drops, and vice versa."""

    unit: int
    literal_extra: tuple[int, ...]
    literal_missing: tuple[int, ...]


def compare_literal_segment(T: int, shift_by_one: bool = False) -> list[RowDelta]:
    """Compare the two streaming forms on the degenerate grid where every unit
    is a single token (T input units, T reasoning units, no answer).

    With the canonical alignment (unit t sees inputs <= t) the literal rule
    keeps extra input columns; with shift-by-one alignment (unit t sees inputs
    <= t+1) the only surplus is the always-visible final input column. This
    harness documents the relation; callers should not expect equality."""
    from .layout import DEFAULT_MARKERS, InputOrder, SentenceUnit, TokenKind

    eos = DEFAULT_MARKERS.token(TokenKind.EOS)
    eot = DEFAULT_MARKERS.token(TokenKind.EOT)
    ctx = tuple(SentenceUnit(k, (eos,)) for k in range(1, T + 1))
    rsn = tuple(SentenceUnit(k, (eot,)) for k in range(1, T + 1))
    layout = SegmentLayout(context_units=ctx, order=InputOrder.CONTEXT_FIRST, reasoning_units=rsn)
    if shift_by_one:
        align = AlignmentMap(tuple((t, min(t + 1, T)) for t in range(1, T + 1)))
    else:
        align = AlignmentMap(tuple((t, t) for t in range(1, T + 1)))

    lit = streaming_mask_literal(T, T)
    seg = streaming_mask_segment(layout, align)
    deltas = []
    for t in range(1, T + 1):
        row = T + t
        lit_vis = {c for c in visible_set(lit, row) if c <= T}
        seg_vis = {c for c in visible_set(seg, row) if c <= T}
        deltas.append(RowDelta(
            unit=t,
            literal_extra=tuple(sorted(lit_vis - seg_vis)),
            literal_missing=tuple(sorted(seg_vis - lit_vis)),
        ))
    return deltas
