"""Named-entity category inventory and lossless conversions between the three
entity encodings used throughout the workbench:

* span annotations (``AnnotatedText``) -- the canonical internal form,
* inline tag token sequences (``<LOC> Paris </LOC> is nice``),
* per-token category label sequences (``LOC O O``).

The label space has exactly 19 values: 18 entity categories plus ``O`` for
tokens outside any entity. Each category owns one open and one close tag,
36 tag tokens in total.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

CATEGORIES: tuple[str, ...] = (
    "PERSON", "NORP", "FAC", "ORG", "GPE", "LOC", "PRODUCT", "EVENT",
    "WORK_OF_ART", "LAW", "LANGUAGE", "DATE", "TIME", "PERCENT", "MONEY",
    "QUANTITY", "ORDINAL", "CARDINAL",
)
O_LABEL = "O"
# O first so that label id 0 is the "outside" class everywhere.
LABELS: tuple[str, ...] = (O_LABEL,) + CATEGORIES
LABEL_TO_ID: dict[str, int] = {lab: i for i, lab in enumerate(LABELS)}

OPEN_TAGS: dict[str, str] = {c: f"<{c}>" for c in CATEGORIES}
CLOSE_TAGS: dict[str, str] = {c: f"</{c}>" for c in CATEGORIES}
TAG_TOKENS: tuple[str, ...] = tuple(OPEN_TAGS[c] for c in CATEGORIES) + tuple(
    CLOSE_TAGS[c] for c in CATEGORIES
)

# Anything matching this is treated as a tag token, even if the category is
# unknown (unknown categories are a parse error, not a surface token).
TAG_RE = re.compile(r"^</?[A-Z_]+>$")


class UnbalancedTag(ValueError):
    """Malformed inline tagging. ``position`` is the index in the input
    token sequence where the offending tag was seen."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at token {position})")
        self.position = position


class LengthMismatch(ValueError):
    pass


def is_tag_token(token: str) -> bool:
    return TAG_RE.match(token) is not None


def label_id(label: str) -> int:
    return LABEL_TO_ID[label]


@dataclass(frozen=True)
class NeSpan:
    """Half-open token span [start, end) carrying a non-``O`` category."""

    start: int
    end: int
    category: str

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span bounds [{self.start}, {self.end})")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown NE category: {self.category!r}")


@dataclass(frozen=True)
class AnnotatedText:
    """Surface tokens plus a flat, sorted, non-overlapping span list."""

    tokens: tuple[str, ...]
    spans: tuple[NeSpan, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "spans", tuple(self.spans))
        for tok in self.tokens:
            if is_tag_token(tok):
                raise ValueError(f"tag token {tok!r} not allowed as surface token")
        prev_end = -1
        for sp in self.spans:
            if sp.start < prev_end:
                raise ValueError("spans must be sorted by start and non-overlapping")
            if sp.end > len(self.tokens):
                raise ValueError(f"span {sp} exceeds token count {len(self.tokens)}")
            prev_end = sp.end


def span_surface(text: AnnotatedText, span: NeSpan) -> str:
    """Surface form of a span: its tokens joined by single spaces."""
    return " ".join(text.tokens[span.start:span.end])


def _split_tag(token: str) -> tuple[bool, str]:
    """(is_close, category) for a token already known to match TAG_RE."""
    if token.startswith("</"):
        return True, token[2:-1]
    return False, token[1:-1]


def parse_inline(tagged_tokens) -> AnnotatedText:
    """Strict parse of an inline-tagged token sequence.

    Raises UnbalancedTag on any malformation: a close tag without a matching
    open, a close of a different category than the pending open, an open tag
    while another is still pending (nesting), an open left pending at end of
    input, an empty pair, or a tag with an unknown category.
    """
    text, dropped = _parse(tagged_tokens, recover=False)
    assert dropped == 0
    return text


def recover_inline(tagged_tokens) -> tuple[AnnotatedText, int]:
    """Lenient parse for model output: offending tags are dropped instead of
    raising. Returns the parsed text plus the number of dropped tags."""
    return _parse(tagged_tokens, recover=True)


def _parse(tagged_tokens, recover: bool) -> tuple[AnnotatedText, int]:
    surface: list[str] = []
    spans: list[NeSpan] = []
    open_cat: str | None = None
    open_start = 0
    open_pos = 0
    dropped = 0

    def offend(message: str, position: int):
        nonlocal dropped
        if not recover:
            raise UnbalancedTag(message, position)
        dropped += 1

    for i, tok in enumerate(tagged_tokens):
        if not is_tag_token(tok):
            surface.append(tok)
            continue
        closing, cat = _split_tag(tok)
        if cat not in CATEGORIES:
            offend(f"unknown category in tag {tok!r}", i)
        elif closing:
            if open_cat is None:
                offend(f"close tag {tok!r} without open", i)
            elif cat != open_cat:
                offend(f"close tag {tok!r} does not match open <{open_cat}>", i)
            elif len(surface) == open_start:
                # Empty pair: drop both tags in recovery mode.
                offend(f"empty span for category {cat}", i)
                dropped += 1
                open_cat = None
            else:
                spans.append(NeSpan(open_start, len(surface), cat))
                open_cat = None
        else:
            if open_cat is not None:
                offend(f"open tag {tok!r} while <{open_cat}> still open", i)
            else:
                open_cat = cat
                open_start = len(surface)
                open_pos = i
    if open_cat is not None:
        offend(f"open tag <{open_cat}> never closed", open_pos)
    return AnnotatedText(tuple(surface), tuple(spans)), dropped


def serialize_inline(text: AnnotatedText) -> list[str]:
    """Inverse of parse_inline: emit open/close tags around each span."""
    opens = {sp.start: sp.category for sp in text.spans}
    closes = {sp.end: sp.category for sp in text.spans}
    out: list[str] = []
    for i, tok in enumerate(text.tokens):
        if i in opens:
            out.append(OPEN_TAGS[opens[i]])
        out.append(tok)
        if i + 1 in closes:
            out.append(CLOSE_TAGS[closes[i + 1]])
    return out


def to_token_labels(text: AnnotatedText) -> tuple[str, ...]:
    """Per-token category labels, ``O`` outside every span."""
    labels = [O_LABEL] * len(text.tokens)
    for sp in text.spans:
        for i in range(sp.start, sp.end):
            labels[i] = sp.category
    return tuple(labels)


def from_token_labels(tokens, labels) -> AnnotatedText:
    """Spans from per-token labels: maximal runs of one non-``O`` category
    become a single span, so two adjacent same-category entities merge.
    That loss is inherent to the 19-way label scheme (no begin/inside marks).
    """
    tokens = tuple(tokens)
    labels = tuple(labels)
    if len(tokens) != len(labels):
        raise LengthMismatch(
            f"{len(tokens)} tokens vs {len(labels)} labels"
        )
    for lab in labels:
        if lab not in LABEL_TO_ID:
            raise ValueError(f"unknown label {lab!r}")
    spans: list[NeSpan] = []
    i = 0
    n = len(tokens)
    while i < n:
        lab = labels[i]
        if lab == O_LABEL:
            i += 1
            continue
        j = i + 1
        while j < n and labels[j] == lab:
            j += 1
        spans.append(NeSpan(i, j, lab))
        i = j
    return AnnotatedText(tokens, tuple(spans))
