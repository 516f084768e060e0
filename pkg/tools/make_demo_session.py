"""Build the bundled demo session and the canned generation responses.

Run from the repository root:

    python3 tools/make_demo_session.py

Writes src/streamkit/replay/demo_session.jsonl and fixtures/canned/attempt{1,2}.txt,
then re-loads and re-scores everything to prove the fixtures are usable."""

from __future__ import annotations

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from streamkit.layout import (  # noqa: E402
    InputOrder,
    SegmentLayout,
    Stream,
    TokenKind,
    content_token,
    seal_unit,
    segment_text,
    skip_unit,
    validate_layout,
)
from streamkit.pipeline import consistency_scores, evaluate  # noqa: E402
from streamkit.providers import LocalHashEmbedder  # noqa: E402
from streamkit.session import SessionMeta, load_session, save_session  # noqa: E402

QUESTION = "How many apples remain in the basket at the end of the day?"
CONTEXT = (
    "The basket starts with twelve apples in the morning. "
    "Three apples are sold before noon. "
    "The weather that day was warm and sunny. "
    "Five more apples are sold in the afternoon."
)
INTERP = "The question asks how many apples remain in the basket."
STEPS = [
    "The basket starts with twelve apples.",
    "Three apples are sold before noon, twelve minus three leaves nine apples.",
    None,  # weather sentence needs no reasoning
    "Five more apples are sold in the afternoon so nine minus five leaves four apples.",
]
TAIL = "So four apples remain in the basket at the end of the day."
ANSWER = "4"


def build_layout() -> SegmentLayout:
    question = tuple(seal_unit(u, TokenKind.EOQ) for u in segment_text(QUESTION))
    context = tuple(seal_unit(u, TokenKind.EOS) for u in segment_text(CONTEXT))
    reasoning = [seal_unit(segment_text(INTERP)[0], TokenKind.EOQ)]
    for k, step in enumerate(STEPS, start=2):
        if step is None:
            reasoning.append(skip_unit(k))
        else:
            reasoning.append(seal_unit(segment_text(step, start_index=k)[0], TokenKind.EOT))
    reasoning.append(seal_unit(segment_text(TAIL, start_index=len(reasoning) + 1)[0], TokenKind.EOR))
    answer = tuple(content_token(w) for w in ANSWER.split())
    return SegmentLayout(
        question_units=question,
        context_units=context,
        order=InputOrder.QUESTION_FIRST,
        reasoning_units=tuple(reasoning),
        answer_tokens=answer,
    )


GOOD_TRACE = (
    f"{INTERP}<EOQ>"
    f"{STEPS[0]}<EOT>{STEPS[1]}<EOT><Skip><EOT>{STEPS[3]}<EOT>"
    f"{TAIL}<EOR>The answer is 4."
)

# drops one step, so sentence-per-step granularity comes out 4/3
BAD_TRACE = (
    f"{INTERP}<EOQ>"
    f"{STEPS[0]}<EOT><Skip><EOT>{STEPS[3]}<EOT>"
    f"{TAIL}<EOR>The answer is 4."
)


def main() -> int:
    layout = build_layout()
    report = validate_layout(layout)
    if not report.ok:
        for line in report.violations:
            print("violation:", line)
        return 1

    session_path = ROOT / "src" / "streamkit" / "replay" / "demo_session.jsonl"
    save_session(layout, session_path, SessionMeta())
    _, loaded = load_session(session_path)
    assert loaded.full_tokens() == layout.full_tokens(), "session round trip changed tokens"

    canned = ROOT / "fixtures" / "canned"
    canned.mkdir(parents=True, exist_ok=True)
    (canned / "attempt1.txt").write_text(BAD_TRACE, encoding="utf-8")
    (canned / "attempt2.txt").write_text(GOOD_TRACE, encoding="utf-8")

    provider = LocalHashEmbedder()
    quality = evaluate(loaded, provider)
    print(f"granularity      {quality.granularity:.4f}")
    for p in consistency_scores(loaded, provider):
        tag = " (skip)" if p.is_skip else " (question)" if p.is_question else ""
        print(f"pair unit {p.input_unit}: {p.score:.4f}{tag}")
    print(f"mean consistency {quality.mean_consistency:.4f}")
    print(f"passes default thresholds: {quality.passed}")
    if not quality.passed:
        for line in quality.failures:
            print("  ", line)
        return 1
    print(f"wrote {session_path.relative_to(ROOT)} and {canned.relative_to(ROOT)}/attempt[12].txt")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
