import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spanqa.grammar import (
    OPTIONS,
    FrameSample,
    fmt_ans_score,
    fmt_time_score,
    format_seconds,
    parse_response,
    render_response,
    serialize_frames,
)

FRAME_RE = re.compile(r"(<image> @ \d+\.\d\ds)( <image> @ \d+\.\d\ds)*")


def frames(*ts):
    return [FrameSample(i, t) for i, t in enumerate(ts)]


class TestSerialize:
    def test_two_frames(self):
        assert serialize_frames(frames(2.0, 4.0)) == "<image> @ 2.00s <image> @ 4.00s"

    def test_empty(self):
        assert serialize_frames([]) == ""

    def test_two_decimal_rounding(self):
        assert serialize_frames(frames(0.333)) == "<image> @ 0.33s"

    def test_half_even_on_decimal_repr(self):
        assert format_seconds(0.125) == "0.12"
        assert format_seconds(0.375) == "0.38"
        assert format_seconds(2.675) == "2.68"

    def test_unordered_rejected(self):
        with pytest.raises(ValueError):
            serialize_frames(frames(3.0, 1.0))

    def test_without_timestamps(self):
        assert serialize_frames(frames(1.0, 2.0), timestamps=False) == "<image> <image>"

    @given(st.lists(st.floats(0, 5_000), max_size=40))
    def test_pattern(self, ts):
        text = serialize_frames(frames(*sorted(ts)))
        assert text == "" or FRAME_RE.fullmatch(text)


class TestParse:
    def test_canonical(self):
        r = parse_response("<span>[3.50,9.25]</span> the cup is lifted <answer>B</answer>")
        assert [(c.start_s, c.end_s) for c in r.span_candidates] == [(3.5, 9.25)]
        assert r.answer == "B"
        assert "cup" in r.rationale_text

    def test_out_of_domain_option(self):
        r = parse_response("<answer>E</answer>")
        assert r.span_candidates == () and r.answer is None

    def test_free_text(self):
        r = parse_response("free text, no tags")
        assert r.span_candidates == () and r.answer is None

    def test_whitespace_tolerated(self):
        r = parse_response("<span> [ 3.5 , 9 ] </span><answer> A </answer>")
        assert (r.span_candidates[0].start_s, r.span_candidates[0].end_s) == (3.5, 9.0)
        assert not r.span_candidates[0].two_decimals
        assert r.answer == "A"

    def test_emission_order_kept(self):
        r = parse_response("<span>[9.00,12.00]</span> then <span>[1.00,2.00]</span>")
        assert [c.start_s for c in r.span_candidates] == [9.0, 1.0]

    def test_spans_after_answer_accepted(self):
        r = parse_response("<answer>D</answer> <span>[1.00,2.00]</span>")
        assert r.answer == "D" and len(r.span_candidates) == 1

    def test_non_numeric_span_flagged(self):
        r = parse_response("<span>[abc,def]</span>")
        assert len(r.span_candidates) == 1 and not r.span_candidates[0].numeric

    @given(st.text(max_size=300))
    def test_total_on_text(self, text):
        parse_response(text)

    @given(st.lists(st.sampled_from(["<span>", "</span>", "[", "]", ",", "1.5", "-2", "<answer>", "</answer>", "A", "x", " "]), max_size=40))
    def test_total_on_tag_soup(self, parts):
        r = parse_response("".join(parts))
        assert r.answer in (None, *OPTIONS)


class TestFormatScores:
    def test_all_predicates(self):
        assert fmt_time_score(parse_response("<span>[1.00,2.00]</span>"), 10, 5) == 1.0

    def test_unordered(self):
        assert fmt_time_score(parse_response("<span>[9.00,3.00]</span>"), 10, 5) == pytest.approx(0.8)

    def test_unparsable(self):
        assert fmt_time_score(parse_response("<span>[abc,def]</span>"), 10, 5) == 0.0
        assert fmt_time_score(parse_response("no spans"), 10, 5) == 0.0

    def test_too_many_and_out_of_range(self):
        text = " ".join(f"<span>[{i}.00,{i}.50]</span>" for i in range(7))
        assert fmt_time_score(parse_response(text), 5, 5) == pytest.approx(0.6)

    def test_fmt_ans(self):
        assert fmt_ans_score(parse_response("<answer>A</answer>")) == 1
        assert fmt_ans_score(parse_response("<answer>A</answer> <answer>B</answer>")) == 0
        assert fmt_ans_score(parse_response("<answer>AB</answer>")) == 0
        assert fmt_ans_score(parse_response("<answer>A</answer> <answer>A</answer>")) == 0

    @given(st.text(max_size=200), st.floats(0.1, 1000), st.integers(1, 8))
    def test_score_lattice(self, text, dur, m):
        r = parse_response(text)
        assert fmt_time_score(r, dur, m) in {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}
        assert fmt_ans_score(r) in {0, 1}


@given(
    st.lists(st.tuples(st.integers(0, 100_000), st.integers(1, 5_000)), min_size=1, max_size=5),
    st.sampled_from(OPTIONS),
)
def test_round_trip(pairs, option):
    spans = [(s / 100, (s + d) / 100) for s, d in pairs]
    r = parse_response(render_response(spans, option, "some rationale"))
    assert [(c.start_s, c.end_s) for c in r.span_candidates] == spans
    assert all(c.two_decimals for c in r.span_candidates)
    assert r.answer == option
