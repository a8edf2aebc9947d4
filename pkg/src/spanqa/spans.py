"""Interval arithmetic over absolute video time.

Spans are closed intervals in seconds. A :class:`SpanSet` is the normalized
union of spans: sorted, pairwise disjoint, never abutting.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

__all__ = [
    "Span",
    "SpanSet",
    "VideoMeta",
    "Relation",
    "IntervalRelation",
    "NormalizeStats",
    "normalize_spans",
    "multi_span_tiou",
    "interval_relation",
    "recall_at_iou",
    "mean_iou",
]


@dataclass(frozen=True, order=True)
class Span:
    start_s: float
    end_s: float

    def __post_init__(self):
        s, e = float(self.start_s), float(self.end_s)
        if not (math.isfinite(s) and math.isfinite(e)):
            raise ValueError(f"span bounds must be finite, got [{s}, {e}]")
        if s < 0:
            raise ValueError(f"span start must be >= 0, got {s}")
        if not s < e:
            raise ValueError(f"span start must precede end, got [{s}, {e}]")
        object.__setattr__(self, "start_s", s)
        object.__setattr__(self, "end_s", e)

    @property
    def length(self) -> float:
        return self.end_s - self.start_s

    def contains(self, t: float) -> bool:
        return self.start_s <= t <= self.end_s

    def as_pair(self) -> tuple[float, float]:
        return (self.start_s, self.end_s)


@dataclass(frozen=True)
class SpanSet:
    """Sorted, disjoint collection of spans. May be empty."""

    spans: tuple[Span, ...] = ()

    def __post_init__(self):
        spans = tuple(self.spans)
        for a, b in zip(spans, spans[1:]):
            if not a.end_s < b.start_s:
                raise ValueError(f"spans not sorted and disjoint: {a} then {b}")
        object.__setattr__(self, "spans", spans)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "SpanSet":
        return cls(tuple(Span(float(s), float(e)) for s, e in pairs))

    def __iter__(self) -> Iterator[Span]:
        return iter(self.spans)

    def __len__(self) -> int:
        return len(self.spans)

    def __bool__(self) -> bool:
        return bool(self.spans)

    def __getitem__(self, i):
        return self.spans[i]

    @property
    def total_length(self) -> float:
        return math.fsum(s.length for s in self.spans)

    def contains(self, t: float) -> bool:
        return any(s.contains(t) for s in self.spans)

    def to_pairs(self) -> list[tuple[float, float]]:
        return [s.as_pair() for s in self.spans]

    def truncate(self, k: int) -> "SpanSet":
        return SpanSet(self.spans[:k])


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    duration_s: float

    def __post_init__(self):
        if not (math.isfinite(self.duration_s) and self.duration_s > 0):
            raise ValueError(f"duration must be positive, got {self.duration_s}")


@dataclass(frozen=True)
class NormalizeStats:
    dropped: int = 0
    merged: int = 0


def _is_valid_pair(s: float, e: float, duration_s: float | None) -> bool:
    if not (math.isfinite(s) and math.isfinite(e)):
        return False
    if s < 0 or s >= e:
        return False
    if duration_s is not None and e > duration_s:
        return False
    return True


def normalize_spans(
    raw: Iterable[Sequence[float]],
    duration_s: float | None,
    gap_eps: float = 0.0,
) -> tuple[SpanSet, NormalizeStats]:
    """Drop invalid pairs, then sort and merge spans whose gap is at most ``gap_eps``.

    ``duration_s=None`` disables the upper bound check (useful when the
    video length is unknown, e.g. benchmark prediction files).

    >>> normalize_spans([(5, 3), (1, 2), (1.8, 4)], 100)[0].to_pairs()
    [(1.0, 4.0)]
    """
    if duration_s is not None and not (math.isfinite(duration_s) and duration_s > 0):
        raise ValueError(f"duration must be positive, got {duration_s}")
    if not (math.isfinite(gap_eps) and gap_eps >= 0):
        raise ValueError(f"gap_eps must be >= 0, got {gap_eps}")

    kept = []
    dropped = 0
    for pair in raw:
        try:
            s, e = float(pair[0]), float(pair[1])
        except (TypeError, ValueError, IndexError):
            dropped += 1
            continue
        if _is_valid_pair(s, e, duration_s):
            kept.append((s, e))
        else:
            dropped += 1
    kept.sort()

    merged_pairs: list[list[float]] = []
    merged = 0
    for s, e in kept:
        if merged_pairs and s - merged_pairs[-1][1] <= gap_eps:
            merged_pairs[-1][1] = max(merged_pairs[-1][1], e)
            merged += 1
        else:
            merged_pairs.append([s, e])
    return SpanSet.from_pairs(merged_pairs), NormalizeStats(dropped, merged)


def _intersection_length(a: SpanSet, b: SpanSet) -> float:
    i = j = 0
    parts = []
    while i < len(a) and j < len(b):
        lo = max(a[i].start_s, b[j].start_s)
        hi = min(a[i].end_s, b[j].end_s)
        if hi > lo:
            parts.append(hi - lo)
        if a[i].end_s < b[j].end_s:
            i += 1
        else:
            j += 1
    return math.fsum(parts)


def multi_span_tiou(pred: SpanSet, gold: SpanSet) -> float:
    """Total intersection length over total union length of two span sets."""
    if not gold:
        raise ValueError("gold span set is empty; tIoU undefined")
    if not pred:
        return 0.0
    inter = _intersection_length(pred, gold)
    union = pred.total_length + gold.total_length - inter
    if inter >= union:
        return 1.0
    return min(1.0, max(0.0, inter / union))


class Relation(enum.Enum):
    BEFORE = "before"
    MEETS = "meets"
    OVERLAPS = "overlaps"
    STARTS = "starts"
    DURING = "during"
    FINISHES = "finishes"
    EQUALS = "equals"


@dataclass(frozen=True)
class IntervalRelation:
    """One of Allen's thirteen relations: a base relation plus an inverse flag.

    ``IntervalRelation(Relation.BEFORE, inverse=True)`` reads "after".
    """

    kind: Relation
    inverse: bool = False

    def __post_init__(self):
        if self.kind is Relation.EQUALS and self.inverse:
            raise ValueError("equals has no inverse")

    def inverted(self) -> "IntervalRelation":
        if self.kind is Relation.EQUALS:
            return self
        return IntervalRelation(self.kind, not self.inverse)

    @property
    def name(self) -> str:
        return self.kind.value + ("_inverse" if self.inverse else "")

    @classmethod
    def from_name(cls, name: str) -> "IntervalRelation":
        inverse = name.endswith("_inverse")
        return cls(Relation(name[: -len("_inverse")] if inverse else name), inverse)


def _forward_relation(a: Span, b: Span) -> Relation | None:
    if a.end_s < b.start_s:
        return Relation.BEFORE
    if a.end_s == b.start_s:
        return Relation.MEETS
    if a.start_s < b.start_s < a.end_s < b.end_s:
        return Relation.OVERLAPS
    if a.start_s == b.start_s and a.end_s < b.end_s:
        return Relation.STARTS
    if b.start_s < a.start_s and a.end_s < b.end_s:
        return Relation.DURING
    if a.end_s == b.end_s and b.start_s < a.start_s:
        return Relation.FINISHES
    return None


def interval_relation(a: Span, b: Span) -> IntervalRelation:
    if a.start_s == b.start_s and a.end_s == b.end_s:
        return IntervalRelation(Relation.EQUALS)
    kind = _forward_relation(a, b)
    if kind is not None:
        return IntervalRelation(kind)
    kind = _forward_relation(b, a)
    if kind is None:  # pragma: no cover - the thirteen relations are exhaustive
        raise AssertionError(f"no relation between {a} and {b}")
    return IntervalRelation(kind, inverse=True)


def _check_ious(ious: Sequence[float]) -> None:
    if len(ious) == 0:
        raise ValueError("no IoU values")
    for v in ious:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"IoU out of [0, 1]: {v}")


def recall_at_iou(per_item_ious: Sequence[float], threshold: float) -> float:
    """Percentage of items with IoU >= threshold (inclusive)."""
    _check_ious(per_item_ious)
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    hits = sum(1 for v in per_item_ious if v >= threshold)
    return 100.0 * hits / len(per_item_ious)


def mean_iou(per_item_ious: Sequence[float]) -> float:
    _check_ious(per_item_ious)
    return 100.0 * math.fsum(per_item_ious) / len(per_item_ious)
