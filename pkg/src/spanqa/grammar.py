"""Timestamp injection and the interleaved span/answer output grammar.

Wire format::

    <image> @ 2.00s <image> @ 4.00s          # frames, in prompt text
    <span>[3.50,9.25]</span>                  # stage-1 evidence span
    <answer>B</answer>                        # stage-2 option
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Sequence

__all__ = [
    "OPTIONS",
    "IMAGE_TOKEN",
    "FrameSample",
    "SpanCandidate",
    "InterleavedResponse",
    "format_seconds",
    "serialize_frames",
    "render_span",
    "render_answer",
    "render_response",
    "parse_response",
    "fmt_time_score",
    "fmt_ans_score",
]

OPTIONS = ("A", "B", "C", "D")
IMAGE_TOKEN = "<image>"

_SPAN_TAG = re.compile(r"<span>(.*?)</span>", re.DOTALL)
_ANSWER_TAG = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_NUMBER = r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)"
_SPAN_BODY = re.compile(rf"\s*\[\s*({_NUMBER})\s*,\s*({_NUMBER})\s*\]\s*")
_TWO_DECIMALS = re.compile(r"[+-]?\d+\.\d\d")


@dataclass(frozen=True)
class FrameSample:
    source_index: int
    timestamp_s: float


def format_seconds(t: float) -> str:
    """Canonical two-decimal rendering, round-half-even on the decimal value.

    >>> format_seconds(0.333), format_seconds(0.125), format_seconds(2)
    ('0.33', '0.12', '2.00')
    """
    if not math.isfinite(t):
        raise ValueError(f"cannot render non-finite time {t}")
    return str(Decimal(repr(float(t))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


def serialize_frames(frames: Sequence[FrameSample], timestamps: bool = True) -> str:
    """Render frames as image placeholders, each followed by its absolute time.

    With ``timestamps=False`` only the placeholders are emitted (the
    no-timestamp ablation).
    """
    for a, b in zip(frames, frames[1:]):
        if b.timestamp_s < a.timestamp_s:
            raise ValueError(
                f"frames out of temporal order: {a.timestamp_s} then {b.timestamp_s}"
            )
    if not timestamps:
        return " ".join(IMAGE_TOKEN for _ in frames)
    return " ".join(f"{IMAGE_TOKEN} @ {format_seconds(f.timestamp_s)}s" for f in frames)


@dataclass(frozen=True)
class SpanCandidate:
    """One ``<span>...</span>`` occurrence as emitted by the model."""

    text: str
    start_s: float | None = None
    end_s: float | None = None
    two_decimals: bool = False

    @property
    def numeric(self) -> bool:
        return self.start_s is not None and self.end_s is not None

    @property
    def ordered(self) -> bool:
        return self.numeric and self.start_s < self.end_s

    def in_range(self, duration_s: float) -> bool:
        return self.numeric and 0 <= self.start_s and self.end_s <= duration_s


@dataclass(frozen=True)
class InterleavedResponse:
    raw_text: str
    span_candidates: tuple[SpanCandidate, ...] = ()
    answer: str | None = None
    answer_tags: tuple[str, ...] = ()
    rationale_text: str = ""

    def numeric_spans(self) -> list[tuple[float, float]]:
        """Numerically parsed candidates, in emission order."""
        return [(c.start_s, c.end_s) for c in self.span_candidates if c.numeric]


def _parse_candidate(body: str) -> SpanCandidate:
    m = _SPAN_BODY.fullmatch(body)
    if not m:
        return SpanCandidate(text=body)
    a, b = m.group(1), m.group(2)
    try:
        start, end = float(a), float(b)
    except ValueError:  # pragma: no cover - regex admits only float syntax
        return SpanCandidate(text=body)
    two = bool(_TWO_DECIMALS.fullmatch(a) and _TWO_DECIMALS.fullmatch(b))
    return SpanCandidate(text=body, start_s=start, end_s=end, two_decimals=two)


def parse_response(raw_text: str) -> InterleavedResponse:
    """Parse model output. Never raises; malformation shows up in the fields."""
    if not isinstance(raw_text, str):
        raw_text = "" if raw_text is None else str(raw_text)
    candidates = tuple(_parse_candidate(m.group(1)) for m in _SPAN_TAG.finditer(raw_text))
    tags = tuple(m.group(1).strip() for m in _ANSWER_TAG.finditer(raw_text))
    answer = tags[0] if len(tags) == 1 and tags[0] in OPTIONS else None
    rationale = _ANSWER_TAG.sub(" ", _SPAN_TAG.sub(" ", raw_text))
    rationale = " ".join(rationale.split())
    return InterleavedResponse(
        raw_text=raw_text,
        span_candidates=candidates,
        answer=answer,
        answer_tags=tags,
        rationale_text=rationale,
    )


def render_span(start_s: float, end_s: float) -> str:
    return f"<span>[{format_seconds(start_s)},{format_seconds(end_s)}]</span>"


def render_answer(option: str) -> str:
    return f"<answer>{option}</answer>"


def render_response(
    spans: Iterable[Sequence[float]] = (),
    option: str | None = None,
    rationale: str = "",
) -> str:
    parts = [render_span(s, e) for s, e in spans]
    if rationale:
        parts.append(rationale)
    if option is not None:
        parts.append(render_answer(option))
    return " ".join(parts)


def fmt_time_score(response: InterleavedResponse, duration_s: float, m_max: int) -> float:
    """Fraction of five well-formedness predicates met by the span candidates.

    Zero when no span tag parses numerically.
    """
    if not duration_s > 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    cands = response.span_candidates
    numeric = [c for c in cands if c.numeric]
    if not numeric:
        return 0.0
    predicates = (
        len(numeric) == len(cands),
        all(c.two_decimals for c in cands),
        all(c.ordered for c in numeric),
        all(c.in_range(duration_s) for c in numeric),
        len(cands) <= m_max,
    )
    return sum(predicates) / 5


def fmt_ans_score(response: InterleavedResponse) -> float:
    return 1.0 if len(response.answer_tags) == 1 and response.answer is not None else 0.0
