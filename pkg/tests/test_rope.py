"""Rotary positions: closed-form rotations, shift invariance, grouped ids."""

import math

import numpy as np
import pytest

from streamkit.layout import (
    DEFAULT_MARKERS,
    InputOrder,
    SegmentLayout,
    SentenceUnit,
    TokenKind,
    content_token,
)
from streamkit.rope import (
    Grouping,
    PositionMap,
    RotaryConfig,
    attention_score,
    grouped_positions,
    rotate,
    rotate_many,
)
from streamkit.verify import rope_shift_invariance

CFG4 = RotaryConfig(head_dim=4)


class TestRotationClosedForm:
    def test_first_basis_vector(self):
        # pair 0 rotates by the raw position angle
        out = rotate(np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32), 2, CFG4)
        want = [math.cos(2.0), math.sin(2.0), 0.0, 0.0]
        assert np.allclose(out, want, atol=1e-6)

    def test_second_basis_vector(self):
        out = rotate(np.array([0.0, 1.0, 0.0, 0.0], dtype=np.float32), 2, CFG4)
        want = [-math.sin(2.0), math.cos(2.0), 0.0, 0.0]
        assert np.allclose(out, want, atol=1e-6)

    def test_second_pair_uses_scaled_frequency(self):
        # pair 1 angle is position * base^(-2/4) = 5 * 0.01
        out = rotate(np.array([0.0, 0.0, 1.0, 0.0], dtype=np.float32), 5, CFG4)
        want = [0.0, 0.0, math.cos(0.05), math.sin(0.05)]
        assert np.allclose(out, want, atol=1e-6)

    def test_zero_position_is_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = rng.standard_normal(16).astype(np.float32)
            out = rotate(v, 0, RotaryConfig(head_dim=16))
            assert np.allclose(out, v, atol=1e-7)

    def test_norm_preserved(self):
        rng = np.random.default_rng(1)
        cfg = RotaryConfig(head_dim=32)
        for _ in range(20):
            v = rng.standard_normal(32).astype(np.float32)
            p = int(rng.integers(0, 1000))
            assert np.linalg.norm(rotate(v, p, cfg)) == pytest.approx(
                np.linalg.norm(v), rel=1e-5
            )

    def test_rotate_many_matches_scalar(self):
        rng = np.random.default_rng(2)
        cfg = RotaryConfig(head_dim=8)
        xs = rng.standard_normal((5, 8)).astype(np.float32)
        ps = np.array([0, 3, 7, 11, 100])
        batch = rotate_many(xs, ps, cfg)
        for k in range(5):
            assert np.allclose(batch[k], rotate(xs[k], int(ps[k]), cfg), atol=1e-7)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RotaryConfig(head_dim=3)
        with pytest.raises(ValueError):
            RotaryConfig(head_dim=0)
        with pytest.raises(ValueError):
            RotaryConfig(head_dim=4, base=1.0)

    def test_wrong_width_rejected(self):
        with pytest.raises(ValueError, match="head_dim"):
            rotate(np.zeros(6, dtype=np.float32), 1, CFG4)


class TestShiftInvariance:
    def test_score_depends_only_on_position_difference(self):
        rng = np.random.default_rng(11)
        cfg = RotaryConfig(head_dim=16)
        for _ in range(50):
            q = rng.standard_normal(16).astype(np.float32)
            k = rng.standard_normal(16).astype(np.float32)
            pq, pk = int(rng.integers(0, 300)), int(rng.integers(0, 300))
            shift = int(rng.integers(1, 300))
            a = attention_score(q, k, pq, pk, cfg)
            b = attention_score(q, k, pq + shift, pk + shift, cfg)
            assert a == pytest.approx(b, abs=1e-6)

    def test_harness_thousand_trials(self):
        assert rope_shift_invariance(1000, seed=0) <= 1e-6


def tiny_layout():
    eoq, eos, eot = (DEFAULT_MARKERS.token(k) for k in
                     (TokenKind.EOQ, TokenKind.EOS, TokenKind.EOT))
    q = (SentenceUnit(1, (content_token("q"), eoq)),)
    c = (SentenceUnit(1, (content_token("c1"), eos)),
         SentenceUnit(2, (content_token("c2"), content_token("c3"), eos)))
    r = (SentenceUnit(1, (content_token("i"), eoq)),
         SentenceUnit(2, (content_token("r1"), eot)),
         SentenceUnit(3, (content_token("r2"), eot)))
    return SegmentLayout(question_units=q, context_units=c,
                         order=InputOrder.QUESTION_FIRST, reasoning_units=r,
                         answer_tokens=(content_token("a"), content_token("b")))


class TestGroupedPositions:
    # tiny_layout spans: input 7 tokens (2+2+3), reasoning 6, answer 2

    def test_vanilla_is_a_running_counter(self):
        pm = grouped_positions(tiny_layout(), Grouping.VANILLA)
        assert pm.ids.tolist() == list(range(15))

    def test_grouped_restarts_reasoning_and_continues_answer(self):
        pm = grouped_positions(tiny_layout())
        assert pm.ids[:7].tolist() == [0, 1, 2, 3, 4, 5, 6]
        assert pm.ids[7:13].tolist() == [0, 1, 2, 3, 4, 5]
        assert pm.ids[13:].tolist() == [6, 7]

    def test_strict_unit_ids_repeat_aligned_start(self):
        pm = grouped_positions(tiny_layout(), strict_unit_ids=True)
        # aligned input units: interp -> unit 1 (start 0), steps -> units 2, 3
        # (starts 2 and 4); answer continues after the input counter
        assert pm.ids[:7].tolist() == [0, 1, 2, 3, 4, 5, 6]
        assert pm.ids[7:13].tolist() == [0, 0, 2, 2, 4, 4]
        assert pm.ids[13:].tolist() == [7, 8]

    def test_position_map_validation(self):
        with pytest.raises(ValueError):
            PositionMap(np.array([[0, 1]]), Grouping.VANILLA)
        with pytest.raises(ValueError):
            PositionMap(np.array([0, -1]), Grouping.VANILLA)

    def test_lengths_cover_all_tokens(self):
        lay = tiny_layout()
        for grouping in Grouping:
            assert len(grouped_positions(lay, grouping)) == len(lay.full_tokens())
