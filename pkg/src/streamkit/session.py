"""Line-delimited JSON session files.

First line is a header record declaring the reserved marker ids, the arrival
order, and the hashing vocab size; every following line is one unit record:
{"stream": "context|question|reasoning|answer", "index": int, "text": str,
"terminator": "EOS|EOQ|EOT|EOR|none"}. Text round-trips through the hashed
word tokenizer, with the skip marker written literally in reasoning bodies."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .layout import (
    DEFAULT_MARKERS,
    InputOrder,
    MARKER_TEXT,
    MarkerVocab,
    SegmentLayout,
    SentenceUnit,
    Token,
    TokenKind,
    content_token,
)


class SessionFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SessionMeta:
    markers: MarkerVocab = DEFAULT_MARKERS
    order: InputOrder = InputOrder.QUESTION_FIRST
    vocab_size: int = 64


_TERM_NAMES = {
    "EOS": TokenKind.EOS,
    "EOQ": TokenKind.EOQ,
    "EOT": TokenKind.EOT,
    "EOR": TokenKind.EOR,
}


def _unit_tokens(text: str, terminator: str, meta: SessionMeta) -> tuple[Token, ...]:
    toks: list[Token] = []
    for word in text.split():
        if word == MARKER_TEXT[TokenKind.SKIP]:
            toks.append(meta.markers.token(TokenKind.SKIP))
        else:
            toks.append(content_token(word, meta.vocab_size, meta.markers))
    if terminator != "none":
        if terminator not in _TERM_NAMES:
            raise SessionFormatError(f"unknown terminator {terminator!r}")
        toks.append(meta.markers.token(_TERM_NAMES[terminator]))
    if not toks:
        raise SessionFormatError("unit record with no tokens")
    return tuple(toks)


def load_session(path: str | Path) -> tuple[SessionMeta, SegmentLayout]:
    """Parse one session file. Raises SessionFormatError on malformed input;
    structural problems beyond format (marker misuse, count mismatches) are a
    job for validate_layout on the returned layout."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    records = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append((n, json.loads(line)))
        except json.JSONDecodeError as e:
            raise SessionFormatError(f"line {n}: invalid JSON: {e}") from None
    if not records:
        raise SessionFormatError("empty session file")
    _, head = records[0]
    if "markers" not in head:
        raise SessionFormatError("first record must be the header with marker ids")
    try:
        markers = MarkerVocab(**{k.lower(): int(v) for k, v in head["markers"].items()})
        meta = SessionMeta(
            markers=markers,
            order=InputOrder(head.get("order", "question_first")),
            vocab_size=int(head.get("vocab_size", 64)),
        )
    except (ValueError, TypeError) as e:
        raise SessionFormatError(f"bad header: {e}") from None

    streams: dict[str, list[tuple[int, str, str]]] = {
        "question": [], "context": [], "reasoning": [], "answer": [],
    }
    for n, rec in records[1:]:
        try:
            stream = rec["stream"]
            index = int(rec["index"])
            text = rec["text"]
            term = rec.get("terminator", "none")
        except (KeyError, TypeError, ValueError) as e:
            raise SessionFormatError(f"line {n}: bad unit record: {e}") from None
        if stream not in streams:
            raise SessionFormatError(f"line {n}: unknown stream {stream!r}")
        streams[stream].append((index, text, term))

    def build(stream: str) -> tuple[SentenceUnit, ...]:
        units = []
        for index, text, term in sorted(streams[stream], key=lambda r: r[0]):
            units.append(SentenceUnit(index, _unit_tokens(text, term, meta)))
        return tuple(units)

    answer: list[Token] = []
    for _, text, term in sorted(streams["answer"], key=lambda r: r[0]):
        if term != "none":
            raise SessionFormatError("answer records take no terminator")
        answer.extend(content_token(w, meta.vocab_size, meta.markers) for w in text.split())

    layout = SegmentLayout(
        question_units=build("question"),
        context_units=build("context"),
        order=meta.order,
        reasoning_units=build("reasoning"),
        answer_tokens=tuple(answer),
    )
    return meta, layout


def save_session(layout: SegmentLayout, path: str | Path, meta: SessionMeta = SessionMeta()) -> None:
    recs: list[dict] = [{
        "markers": {
            "EOS": meta.markers.eos, "EOQ": meta.markers.eoq, "EOT": meta.markers.eot,
            "EOR": meta.markers.eor, "SKIP": meta.markers.skip,
        },
        "order": layout.order.value,
        "vocab_size": meta.vocab_size,
    }]
    for stream, units in (
        ("question", layout.question_units),
        ("context", layout.context_units),
        ("reasoning", layout.reasoning_units),
    ):
        for u in units:
            term = u.terminator.value if u.terminator else "none"
            recs.append({"stream": stream, "index": u.index, "text": u.text, "terminator": term})
    if layout.answer_tokens:
        text = " ".join(t.text for t in layout.answer_tokens if t.text)
        recs.append({"stream": "answer", "index": 1, "text": text, "terminator": "none"})
    with open(path, "w", encoding="utf-8") as f:
        for rec in recs:
            f.write(json.dumps(rec) + "\n")
