"""Rotary position encoding and the grouped position-id scheme.

Under the grouped scheme the input stream takes ids 0..T-1 in arrival order,
the reasoning stream restarts its counter at 0, and answer tokens continue the
reasoning counter. That keeps query/key distances stable while reasoning is
interleaved with still-arriving input. Rotation uses interleaved pairs
(2i, 2i+1) with per-pair angle position * base^(-2i/head_dim); scores depend
only on position differences, which the test suite checks directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .layout import AlignmentMap, SegmentLayout


@dataclass(frozen=True)
class RotaryConfig:
    head_dim: int = 16
    base: float = 10000.0

    def __post_init__(self) -> None:
        if self.head_dim < 2 or self.head_dim % 2 != 0:
            raise ValueError(f"head_dim must be even and >= 2, got {self.head_dim}")
        if self.base <= 1.0:
            raise ValueError(f"rotary base must be > 1, got {self.base}")

    def pair_frequencies(self) -> np.ndarray:
        # one inverse frequency per (2i, 2i+1) pair, float64 for angle accuracy
        exp = np.arange(0, self.head_dim, 2, dtype=np.float64) / self.head_dim
        return self.base ** (-exp)


class Grouping(Enum):
    VANILLA = "vanilla"
    STREAMING_GROUPED = "streaming_grouped"


@dataclass(frozen=True)
class PositionMap:
    """Position id per token of the concatenated sequence."""

    ids: np.ndarray
    grouping: Grouping

    def __post_init__(self) -> None:
        if self.ids.ndim != 1:
            raise ValueError("position ids must be one-dimensional")
        if self.ids.size and self.ids.min() < 0:
            raise ValueError("position ids must be nonnegative")

    def __len__(self) -> int:
        return int(self.ids.size)


def grouped_positions(
    layout: SegmentLayout,
    grouping: Grouping = Grouping.STREAMING_GROUPED,
    *,
    strict_unit_ids: bool = False,
    alignment: AlignmentMap | None = None,
) -> PositionMap:
    """Position ids for a full layout.

    Vanilla: one running counter over everything. Grouped: input counter runs
    0..T-1, reasoning restarts at 0, answer continues the reasoning counter.
    With strict_unit_ids every token of reasoning unit t shares the start id of
    its aligned input unit (an exploratory variant, off by default; answer then
    continues after the input counter)."""
    n_in = layout.n_input_tokens
    n_rsn = sum(len(u) for u in layout.reasoning_units)
    n_ans = len(layout.answer_tokens)
    total = n_in + n_rsn + n_ans
    if grouping == Grouping.VANILLA:
        return PositionMap(np.arange(total, dtype=np.int64), grouping)

    ids = np.empty(total, dtype=np.int64)
    ids[:n_in] = np.arange(n_in)
    if strict_unit_ids:
        from .layout import build_alignment

        if alignment is None:
            alignment = build_alignment(layout)
        in_spans = layout.input_unit_spans()
        pos = n_in
        for t, u in enumerate(layout.reasoning_units, start=1):
            unit_id = in_spans[alignment.last_visible(t) - 1][0]
            ids[pos:pos + len(u)] = unit_id
            pos += len(u)
        ids[pos:] = np.arange(n_in, n_in + n_ans)
    else:
        ids[n_in:n_in + n_rsn] = np.arange(n_rsn)
        ids[n_in + n_rsn:] = np.arange(n_rsn, n_rsn + n_ans)
    return PositionMap(ids, grouping)


def rotate(vec: np.ndarray, position: int | float, config: RotaryConfig) -> np.ndarray:
    """Rotate one head-dim vector (or a stack of them) to a position."""
    return rotate_many(np.asarray(vec), np.asarray(position), config)


def rotate_many(x: np.ndarray, positions: np.ndarray, config: RotaryConfig) -> np.ndarray:
    """Vectorized rotation. x has shape (..., head_dim); positions broadcasts
    against the leading axes. Angles run in float64, output is float32."""
    x = np.asarray(x)
    if x.shape[-1] != config.head_dim:
        raise ValueError(f"last axis {x.shape[-1]} != head_dim {config.head_dim}")
    pos = np.asarray(positions, dtype=np.float64)
    angles = pos[..., None] * config.pair_frequencies()  # (..., head_dim/2)
    cos, sin = np.cos(angles), np.sin(angles)
    even = x[..., 0::2].astype(np.float64)
    odd = x[..., 1::2].astype(np.float64)
    out = np.empty(np.broadcast_shapes(x.shape, angles.shape[:-1] + (config.head_dim,)), dtype=np.float64)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out.astype(np.float32)


def attention_score(
    q: np.ndarray, k: np.ndarray, pos_q: int, pos_k: int, config: RotaryConfig
) -> float:
    """Unscaled dot product after rotating both sides to their positions.
    Depends only on pos_q - pos_k."""
    rq = rotate(q, pos_q, config).astype(np.float64)
    rk = rotate(k, pos_k, config).astype(np.float64)
    return float(np.dot(rq, rk))
