"""Sentence-level stream layout: tokens, boundary markers, units, alignment.

Everything downstream (masks, positions, the decode engine, scoring) consumes
the types defined here. Representation is tokenization-agnostic: a Token is an
integer id plus an optional surface text, and reserved boundary markers are
ordinary vocabulary ids declared once in a MarkerVocab.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence


class TokenKind(Enum):
    CONTENT = "content"
    EOS = "EOS"      # ends one input context sentence
    EOQ = "EOQ"      # ends the question, and its interpretation step
    EOT = "EOT"      # ends one reasoning step
    EOR = "EOR"      # ends the whole reasoning chain
    SKIP = "Skip"    # body marker: this input sentence needs no reasoning


TERMINATOR_KINDS = frozenset({TokenKind.EOS, TokenKind.EOQ, TokenKind.EOT, TokenKind.EOR})

MARKER_TEXT = {
    TokenKind.EOS: "<EOS>",
    TokenKind.EOQ: "<EOQ>",
    TokenKind.EOT: "<EOT>",
    TokenKind.EOR: "<EOR>",
    TokenKind.SKIP: "<Skip>",
}
_TEXT_TO_KIND = {v: k for k, v in MARKER_TEXT.items()}


class Stream(Enum):
    QUESTION = "question"
    CONTEXT = "context"
    REASONING = "reasoning"
    ANSWER = "answer"


class InputOrder(Enum):
    QUESTION_FIRST = "question_first"
    CONTEXT_FIRST = "context_first"


class DepthLevel(Enum):
    """Depth of the post-stream thinking tail: answer directly, add one global
    pass, or add a global pass plus a reflection pass."""

    D1_DIRECT = "d1"
    D2_GLOBAL = "d2"
    D3_REFLECT = "d3"


@dataclass(frozen=True, slots=True)
class Token:
    id: int
    kind: TokenKind = TokenKind.CONTENT
    text: str | None = None

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"token id must be nonnegative, got {self.id}")


@dataclass(frozen=True, slots=True)
class MarkerVocab:
    """Reserved vocabulary ids for the five boundary markers."""

    eos: int = 1
    eoq: int = 2
    eot: int = 3
    eor: int = 4
    skip: int = 5

    def __post_init__(self) -> None:
        ids = (self.eos, self.eoq, self.eot, self.eor, self.skip)
        if any(i < 0 for i in ids):
            raise ValueError("marker ids must be nonnegative")
        if len(set(ids)) != 5:
            raise ValueError(f"marker ids must be distinct, got {ids}")

    @property
    def reserved_ids(self) -> frozenset[int]:
        return frozenset((self.eos, self.eoq, self.eot, self.eor, self.skip))

    def kind_of(self, token_id: int) -> TokenKind:
        for kind, tid in self._pairs():
            if tid == token_id:
                return kind
        return TokenKind.CONTENT

    def id_of(self, kind: TokenKind) -> int:
        for k, tid in self._pairs():
            if k == kind:
                return tid
        raise ValueError(f"{kind} is not a reserved marker")

    def token(self, kind: TokenKind) -> Token:
        return Token(self.id_of(kind), kind, MARKER_TEXT[kind])

    def _pairs(self) -> tuple[tuple[TokenKind, int], ...]:
        return (
            (TokenKind.EOS, self.eos),
            (TokenKind.EOQ, self.eoq),
            (TokenKind.EOT, self.eot),
            (TokenKind.EOR, self.eor),
            (TokenKind.SKIP, self.skip),
        )


DEFAULT_MARKERS = MarkerVocab()


def content_token(word: str, vocab_size: int = 64, markers: MarkerVocab = DEFAULT_MARKERS) -> Token:
    """Deterministic content token for a word: hashed into the non-reserved id
    range. Collisions are fine, surface text is kept on the token."""
    reserved = sorted(markers.reserved_ids)
    free = [i for i in range(vocab_size) if i not in markers.reserved_ids]
    if not free:
        raise ValueError(f"vocab_size {vocab_size} leaves no room beyond {len(reserved)} reserved ids")
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    return Token(free[int.from_bytes(digest, "big") % len(free)], TokenKind.CONTENT, word)


@dataclass(frozen=True, slots=True)
class SentenceUnit:
    """One sentence-level unit of a stream. ``index`` is 1-based within its
    stream. A sealed unit carries exactly one terminator marker as its last
    token; an unsealed unit (fresh from segmentation) has none. Structural
    violations beyond emptiness are reported by validate_layout, not raised
    here, so malformed layouts stay constructible for inspection."""

    index: int
    tokens: tuple[Token, ...]

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"unit index must be >= 1, got {self.index}")
        if not self.tokens:
            raise ValueError("unit must contain at least one token")

    @property
    def terminator(self) -> TokenKind | None:
        last = self.tokens[-1].kind
        return last if last in TERMINATOR_KINDS else None

    @property
    def body(self) -> tuple[Token, ...]:
        return self.tokens[:-1] if self.terminator is not None else self.tokens

    @property
    def text(self) -> str:
        return " ".join(t.text for t in self.body if t.text is not None)

    @property
    def is_skip(self) -> bool:
        body = self.body
        return len(body) == 1 and body[0].kind == TokenKind.SKIP

    def __len__(self) -> int:
        return len(self.tokens)

    def violations(self, role: Stream | None = None) -> list[str]:
        out: list[str] = []
        tag = f"{role.value} unit {self.index}" if role else f"unit {self.index}"
        for t in self.body:
            if t.kind in TERMINATOR_KINDS:
                out.append(f"{tag}: terminator marker {t.kind.value} inside unit body")
            if t.kind == TokenKind.SKIP and role in (Stream.QUESTION, Stream.CONTEXT):
                out.append(f"{tag}: skip marker is not allowed in input streams")
        if self.terminator is None:
            out.append(f"{tag}: missing terminator marker")
        elif not self.body:
            out.append(f"{tag}: empty body")
        if role is not None and self.terminator is not None:
            allowed = {
                Stream.CONTEXT: {TokenKind.EOS},
                Stream.QUESTION: {TokenKind.EOQ},
                Stream.REASONING: {TokenKind.EOT, TokenKind.EOQ, TokenKind.EOR},
            }.get(role, set())
            if self.terminator not in allowed:
                out.append(f"{tag}: terminator {self.terminator.value} not valid for this stream")
        return out


@dataclass(frozen=True, slots=True)
class SegmentLayout:
    """Full layout of one session: input units (question + context in a declared
    arrival order), the reasoning units, and the flat answer tokens."""

    question_units: tuple[SentenceUnit, ...] = ()
    context_units: tuple[SentenceUnit, ...] = ()
    order: InputOrder = InputOrder.QUESTION_FIRST
    reasoning_units: tuple[SentenceUnit, ...] = ()
    answer_tokens: tuple[Token, ...] = ()

    # ---- arrival-ordered input views -------------------------------------

    def input_units(self) -> tuple[SentenceUnit, ...]:
        if self.order == InputOrder.QUESTION_FIRST:
            return self.question_units + self.context_units
        return self.context_units + self.question_units

    def input_tokens(self) -> tuple[Token, ...]:
        return tuple(t for u in self.input_units() for t in u.tokens)

    def reasoning_tokens(self) -> tuple[Token, ...]:
        return tuple(t for u in self.reasoning_units for t in u.tokens)

    def full_tokens(self) -> tuple[Token, ...]:
        return self.input_tokens() + self.reasoning_tokens() + self.answer_tokens

    @property
    def n_input_units(self) -> int:
        return len(self.question_units) + len(self.context_units)

    @property
    def n_input_tokens(self) -> int:
        return sum(len(u) for u in self.input_units())

    # 0-based [start, end) token spans in the concatenated sequence
    def input_unit_spans(self) -> list[tuple[int, int]]:
        spans, pos = [], 0
        for u in self.input_units():
            spans.append((pos, pos + len(u)))
            pos += len(u)
        return spans

    def reasoning_unit_spans(self) -> list[tuple[int, int]]:
        spans, pos = [], self.n_input_tokens
        for u in self.reasoning_units:
            spans.append((pos, pos + len(u)))
            pos += len(u)
        return spans

    def answer_span(self) -> tuple[int, int]:
        start = self.n_input_tokens + sum(len(u) for u in self.reasoning_units)
        return (start, start + len(self.answer_tokens))


@dataclass(frozen=True, slots=True)
class AlignmentMap:
    """Pairs (reasoning unit index, last visible input unit in arrival order),
    both 1-based. Monotone nondecreasing in the second component."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        prev_vis = 0
        for n, (r, vis) in enumerate(self.pairs, start=1):
            if r != n:
                raise ValueError(f"reasoning indices must be contiguous from 1, got {r} at slot {n}")
            if vis < 1:
                raise ValueError(f"last visible input unit must be >= 1, got {vis}")
            if vis < prev_vis:
                raise ValueError(f"alignment not monotone: unit {r} sees {vis} after {prev_vis}")
            prev_vis = vis

    def last_visible(self, reasoning_index: int) -> int:
        if not 1 <= reasoning_index <= len(self.pairs):
            raise ValueError(f"no alignment entry for reasoning unit {reasoning_index}")
        return self.pairs[reasoning_index - 1][1]

    def __len__(self) -> int:
        return len(self.pairs)


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...]


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------

_DEFAULT_ABBREVIATIONS = frozenset({
    "mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "jr.", "sr.",
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "al.", "fig.", "no.", "approx.",
})


@dataclass(frozen=True, slots=True)
class SegmentationPolicy:
    """Rule-based sentence boundaries: terminal punctuation or newline, with an
    abbreviation allowlist and a decimal-number guard for periods."""

    terminals: str = ".?!"
    split_on_newline: bool = True
    abbreviations: frozenset[str] = _DEFAULT_ABBREVIATIONS


DEFAULT_POLICY = SegmentationPolicy()


def split_sentences(text: str, policy: SegmentationPolicy = DEFAULT_POLICY) -> list[str]:
    """Split raw text into sentence strings. No marker handling here."""
    sentences: list[str] = []
    buf: list[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            if policy.split_on_newline:
                _flush(buf, sentences)
            else:
                buf.append(" ")
            i += 1
            continue
        buf.append(ch)
        if ch in policy.terminals:
            nxt = text[i + 1] if i + 1 < n else " "
            if ch == "." and i + 1 < n and text[i + 1].isdigit() and i > 0 and text[i - 1].isdigit():
                i += 1
                continue  # decimal point, keep scanning
            if nxt.isspace() or i + 1 == n:
                tail = "".join(buf).rsplit(None, 1)
                last_word = tail[-1].lower() if tail else ""
                if ch == "." and last_word in policy.abbreviations:
                    i += 1
                    continue
                _flush(buf, sentences)
        i += 1
    _flush(buf, sentences)
    return sentences


def _flush(buf: list[str], out: list[str]) -> None:
    s = "".join(buf).strip()
    if s:
        out.append(s)
    buf.clear()


def segment_text(
    text: str,
    policy: SegmentationPolicy = DEFAULT_POLICY,
    *,
    vocab_size: int = 64,
    markers: MarkerVocab = DEFAULT_MARKERS,
    start_index: int = 1,
) -> list[SentenceUnit]:
    """Segment text into unsealed sentence units with hashed word tokens.

    Round trip: sealing the units and stripping reserved markers recovers the
    sentence texts up to whitespace normalization (words are rejoined with
    single spaces)."""
    units = []
    for k, sent in enumerate(split_sentences(text, policy)):
        words = sent.split()
        toks = tuple(content_token(w, vocab_size, markers) for w in words)
        units.append(SentenceUnit(start_index + k, toks))
    return units


# ---------------------------------------------------------------------------
# boundary markers
# ---------------------------------------------------------------------------

_ROLE_TERMINATOR = {
    Stream.CONTEXT: TokenKind.EOS,
    Stream.QUESTION: TokenKind.EOQ,
    Stream.REASONING: TokenKind.EOT,
}


def seal_unit(unit: SentenceUnit, kind: TokenKind, markers: MarkerVocab = DEFAULT_MARKERS) -> SentenceUnit:
    """Append one terminator marker. Errors if any reserved terminator is
    already present anywhere in the unit."""
    if kind not in TERMINATOR_KINDS:
        raise ValueError(f"{kind} is not a terminator kind")
    for t in unit.tokens:
        if t.kind in TERMINATOR_KINDS:
            raise ValueError(
                f"unit {unit.index} already contains a {t.kind.value} marker, refusing to seal"
            )
    return SentenceUnit(unit.index, unit.tokens + (markers.token(kind),))


def insert_boundary_tokens(
    units: Sequence[SentenceUnit],
    role: Stream,
    markers: MarkerVocab = DEFAULT_MARKERS,
) -> list[Token]:
    """Seal every unit with the terminator of its stream role and return the
    flat token sequence. Skip markers are only legal in reasoning bodies."""
    if role not in _ROLE_TERMINATOR:
        raise ValueError(f"stream role {role.value} takes no boundary markers")
    out: list[Token] = []
    for u in units:
        if role != Stream.REASONING:
            for t in u.tokens:
                if t.kind == TokenKind.SKIP:
                    raise ValueError(f"unit {u.index}: skip marker not allowed in {role.value} stream")
        out.extend(seal_unit(u, _ROLE_TERMINATOR[role], markers).tokens)
    return out


def strip_markers(tokens: Iterable[Token]) -> list[Token]:
    return [t for t in tokens if t.kind == TokenKind.CONTENT]


def skip_unit(index: int, markers: MarkerVocab = DEFAULT_MARKERS) -> SentenceUnit:
    """A full skip step: skip marker body sealed by a step terminator."""
    return SentenceUnit(index, (markers.token(TokenKind.SKIP), markers.token(TokenKind.EOT)))


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------

def build_alignment(layout: SegmentLayout) -> AlignmentMap:
    """Canonical one-to-one alignment between reasoning units and input prefixes.

    Step units (EOT-terminated) pair with context sentences in order; the
    question-interpretation unit (EOQ-terminated) pairs with the question
    prefix under question-first order and with the full input under
    context-first order; a chain-final unit (EOR-terminated) always sees the
    full input. Raises AlignmentError on count mismatch or misplacement,
    reporting both counts."""
    nq, nc = len(layout.question_units), len(layout.context_units)
    kinds = [u.terminator for u in layout.reasoning_units]
    for u, k in zip(layout.reasoning_units, kinds):
        if k not in (TokenKind.EOT, TokenKind.EOQ, TokenKind.EOR):
            raise AlignmentError(
                f"reasoning unit {u.index} has terminator {k.value if k else 'none'}, "
                "expected a reasoning terminator"
            )
    n_steps = sum(1 for k in kinds if k == TokenKind.EOT)
    n_interp = sum(1 for k in kinds if k == TokenKind.EOQ)
    n_final = sum(1 for k in kinds if k == TokenKind.EOR)
    if n_steps != nc:
        raise AlignmentError(
            f"step count mismatch: {nc} context sentence terminators vs {n_steps} step terminators"
        )
    if n_interp > 1:
        raise AlignmentError(f"at most one question-interpretation unit, got {n_interp}")
    if n_interp == 1 and nq == 0:
        raise AlignmentError("question-interpretation unit present but no question units")
    if n_final > 1:
        raise AlignmentError(f"at most one chain-final unit, got {n_final}")
    if n_final == 1 and kinds[-1] != TokenKind.EOR:
        raise AlignmentError("chain-final unit must be the last reasoning unit")

    if layout.order == InputOrder.QUESTION_FIRST:
        if n_interp == 1 and kinds[0] != TokenKind.EOQ:
            raise AlignmentError("under question-first order the interpretation unit must come first")
        interp_vis = max(nq, 1)
    else:
        # interpretation conditions on every context step, so it comes after them
        expected_slot = n_steps  # 0-based position after all step units
        if n_interp == 1 and kinds[expected_slot] != TokenKind.EOQ:
            raise AlignmentError("under context-first order the interpretation unit must follow all steps")
        interp_vis = nc + nq

    pairs: list[tuple[int, int]] = []
    step_no = 0
    for slot, k in enumerate(kinds, start=1):
        if k == TokenKind.EOQ:
            vis = interp_vis
        elif k == TokenKind.EOT:
            step_no += 1
            vis = (nq + step_no) if layout.order == InputOrder.QUESTION_FIRST else step_no
        else:  # chain-final
            vis = nq + nc
        pairs.append((slot, max(vis, 1)))
    return AlignmentMap(tuple(pairs))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_layout(layout: SegmentLayout) -> ValidationReport:
    """Collect every structural violation. Reports, never raises."""
    violations: list[str] = []
    for role, units in (
        (Stream.QUESTION, layout.question_units),
        (Stream.CONTEXT, layout.context_units),
        (Stream.REASONING, layout.reasoning_units),
    ):
        for want, u in enumerate(units, start=1):
            if u.index != want:
                violations.append(
                    f"{role.value} unit indices not contiguous: expected {want}, got {u.index}"
                )
            violations.extend(u.violations(role))
    for t in layout.answer_tokens:
        if t.kind != TokenKind.CONTENT:
            violations.append(f"answer stream contains reserved marker {t.kind.value}")
    try:
        build_alignment(layout)
    except AlignmentError as e:
        violations.append(str(e))
    return ValidationReport(ok=not violations, violations=tuple(violations))


# ---------------------------------------------------------------------------
# marked-text parsing (for generated traces)
# ---------------------------------------------------------------------------

_MARKER_SPLIT = re.compile(r"(<EOS>|<EOQ>|<EOT>|<EOR>|<Skip>)")


@dataclass(frozen=True, slots=True)
class ParsedTrace:
    units: tuple[SentenceUnit, ...]
    trailing_text: str


def parse_marked_text(
    text: str,
    *,
    vocab_size: int = 64,
    markers: MarkerVocab = DEFAULT_MARKERS,
    start_index: int = 1,
) -> ParsedTrace:
    """Parse text that carries inline boundary markers into sealed units.

    Content between markers becomes hashed word tokens; a skip marker becomes a
    body token; each terminator closes one unit. Text after the last
    terminator is returned as trailing_text (usually the answer)."""
    units: list[SentenceUnit] = []
    body: list[Token] = []
    idx = start_index
    pieces = [p for p in _MARKER_SPLIT.split(text) if p.strip()]
    for piece in pieces:
        kind = _TEXT_TO_KIND.get(piece)
        if kind is None:
            body.extend(content_token(w, vocab_size, markers) for w in piece.split())
        elif kind == TokenKind.SKIP:
            body.append(markers.token(TokenKind.SKIP))
        else:
            if not body:
                raise ValueError(f"empty unit before {MARKER_TEXT[kind]} marker")
            units.append(SentenceUnit(idx, tuple(body) + (markers.token(kind),)))
            idx += 1
            body = []
    trailing = " ".join(t.text for t in body if t.text is not None)
    return ParsedTrace(tuple(units), trailing)
