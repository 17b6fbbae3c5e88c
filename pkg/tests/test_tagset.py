"""Tag-scheme conversions: inline tags, span lists, per-token labels."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jstner.tagset import (CATEGORIES, LABELS, TAG_TOKENS, AnnotatedText,
                           LengthMismatch, NeSpan, O_LABEL, UnbalancedTag,
                           from_token_labels, parse_inline, recover_inline,
                           serialize_inline, span_surface, to_token_labels)


def test_inventory_sizes():
    assert len(CATEGORIES) == 18
    assert len(LABELS) == 19
    assert LABELS.count(O_LABEL) == 1
    assert len(TAG_TOKENS) == 36
    assert len(set(TAG_TOKENS)) == 36


class TestParseInline:
    def test_single_span(self):
        text = parse_inline(["<LOC>", "Paris", "</LOC>", "is", "nice"])
        assert text.tokens == ("Paris", "is", "nice")
        assert text.spans == (NeSpan(0, 1, "LOC"),)

    def test_no_tags(self):
        text = parse_inline(["hello", "world"])
        assert text.tokens == ("hello", "world")
        assert text.spans == ()

    def test_two_spans(self):
        text = parse_inline(["<ORG>", "UN", "</ORG>", "in", "<GPE>", "New", "York", "</GPE>"])
        assert text.tokens == ("UN", "in", "New", "York")
        assert text.spans == (NeSpan(0, 1, "ORG"), NeSpan(2, 4, "GPE"))

    @pytest.mark.parametrize("tokens,pos", [
        (["</LOC>", "a"], 0),                      # close without open
        (["<LOC>", "a"], 0),                       # open never closed
        (["<LOC>", "a", "</ORG>"], 2),             # mismatched close
        (["<LOC>", "<ORG>", "a", "</ORG>"], 1),    # nested open
        (["<LOC>", "</LOC>"], 1),                  # empty pair
        (["<BOGUS>", "a"], 0),                     # unknown category
    ])
    def test_strict_errors_carry_position(self, tokens, pos):
        with pytest.raises(UnbalancedTag) as err:
            parse_inline(tokens)
        assert err.value.position == pos

    def test_recovery_drops_offending_tags(self):
        text, dropped = recover_inline(["</LOC>", "a", "<ORG>", "b"])
        assert text.tokens == ("a", "b")
        assert text.spans == ()
        assert dropped == 2

    def test_recovery_mismatched_close_keeps_open(self):
        text, dropped = recover_inline(["<ORG>", "UN", "</GPE>", "hi", "</ORG>"])
        assert text.spans == (NeSpan(0, 2, "ORG"),)
        assert dropped == 1

    def test_recovery_of_valid_input_is_strict_parse(self):
        toks = ["<ORG>", "UN", "</ORG>", "in", "<GPE>", "NY", "</GPE>"]
        text, dropped = recover_inline(toks)
        assert dropped == 0
        assert text == parse_inline(toks)


class TestSerializeInline:
    def test_single(self):
        a = AnnotatedText(("Paris",), (NeSpan(0, 1, "LOC"),))
        assert serialize_inline(a) == ["<LOC>", "Paris", "</LOC>"]

    def test_identity_without_spans(self):
        a = AnnotatedText(("a", "b"))
        assert serialize_inline(a) == ["a", "b"]

    def test_two_spans(self):
        a = AnnotatedText(("UN", "in", "New", "York"),
                          (NeSpan(0, 1, "ORG"), NeSpan(2, 4, "GPE")))
        assert serialize_inline(a) == ["<ORG>", "UN", "</ORG>", "in",
                                       "<GPE>", "New", "York", "</GPE>"]


class TestTokenLabels:
    def test_to_labels(self):
        a = AnnotatedText(("Paris", "is", "nice"), (NeSpan(0, 1, "LOC"),))
        assert to_token_labels(a) == ("LOC", "O", "O")

    def test_all_o_without_spans(self):
        assert to_token_labels(AnnotatedText(("x", "y"))) == ("O", "O")

    def test_mixed(self):
        a = AnnotatedText(("UN", "in", "New", "York"),
                          (NeSpan(0, 1, "ORG"), NeSpan(2, 4, "GPE")))
        assert to_token_labels(a) == ("ORG", "O", "GPE", "GPE")

    def test_from_labels(self):
        a = from_token_labels(("Paris", "is", "nice"), ("LOC", "O", "O"))
        assert a.spans == (NeSpan(0, 1, "LOC"),)

    def test_from_labels_inverse(self):
        a = from_token_labels(("UN", "in", "New", "York"), ("ORG", "O", "GPE", "GPE"))
        assert a.spans == (NeSpan(0, 1, "ORG"), NeSpan(2, 4, "GPE"))

    def test_adjacent_same_category_merges(self):
        a = from_token_labels(("a", "b"), ("GPE", "GPE"))
        assert a.spans == (NeSpan(0, 2, "GPE"),)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            from_token_labels(("a",), ("O", "O"))


def test_span_surface_single_spaces():
    a = AnnotatedText(("New", "York", "City"), (NeSpan(0, 3, "GPE"),))
    assert span_surface(a, a.spans[0]) == "New York City"


# ---------------------------------------------------------------------------
# Property tests
# ---------------------------------------------------------------------------

surface_token = st.text(alphabet="abcdefgh", min_size=1, max_size=4)


@st.composite
def annotated_texts(draw, max_tokens=12, allow_adjacent_same=True):
    n = draw(st.integers(min_value=0, max_value=max_tokens))
    tokens = tuple(draw(surface_token) for _ in range(n))
    spans = []
    i = 0
    prev_cat = None
    prev_end = -1
    while i < n:
        if draw(st.booleans()):
            end = draw(st.integers(min_value=i + 1, max_value=n))
            cat = draw(st.sampled_from(CATEGORIES))
            if not allow_adjacent_same and i == prev_end and cat == prev_cat:
                i += 1
                continue
            spans.append(NeSpan(i, end, cat))
            prev_cat, prev_end = cat, end
            i = end + draw(st.integers(min_value=0, max_value=2))
        else:
            i += 1
    return AnnotatedText(tokens, tuple(spans))


@given(annotated_texts())
@settings(max_examples=300, deadline=None)
def test_roundtrip_serialize_parse(a):
    assert parse_inline(serialize_inline(a)) == a


@given(annotated_texts(allow_adjacent_same=False))
@settings(max_examples=300, deadline=None)
def test_label_roundtrip_without_adjacent_same_category(a):
    assert from_token_labels(a.tokens, to_token_labels(a)) == a


@given(st.lists(st.sampled_from(list(TAG_TOKENS) + ["w1", "w2", "w3"]), max_size=16))
@settings(max_examples=300, deadline=None)
def test_recovery_never_yields_overlapping_spans(tokens):
    text, _ = recover_inline(tokens)
    prev_end = 0
    for sp in text.spans:
        assert sp.start >= prev_end
        assert sp.end <= len(text.tokens)
        prev_end = sp.end
