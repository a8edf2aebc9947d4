"""Span-grounded multiple-choice records from event graphs.

Each event node becomes one four-option question whose gold evidence is
the node's time span(s). Distractors come from other events of the same
video. Records then pass the review gates before near-duplicates are
dropped and the correct-option labels are balanced. Splits are made per
video.
"""
from __future__ import annotations

import hashlib
import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .events import EventGraph, EventNode
from .grammar import OPTIONS, format_seconds
from .providers import token_jaccard, tokens
from .spans import SpanSet, normalize_spans

__all__ = [
    "QARecord",
    "QuestionDraft",
    "QuestionWriter",
    "TemplateWriter",
    "LocalityChecker",
    "TextOnlyChecker",
    "ReviewCheckers",
    "Verdict",
    "ReviewReport",
    "SplitManifest",
    "DatasetStats",
    "DEICTIC_TERMS",
    "VAGUE_TERMS",
    "record_id",
    "quantize_spans",
    "schema_problems",
    "build_record",
    "review_record",
    "dedup_and_balance",
    "split_by_video",
    "dataset_stats",
    "build_dataset",
    "record_to_dict",
    "record_from_dict",
    "write_records",
    "read_records",
    "dump_records",
]

DEICTIC_TERMS = ("this clip", "this moment", "this video", "the clip", "here", "now")
VAGUE_TERMS = ("something", "stuff", "somehow", "whatever")
FIELDS = (
    "video_id",
    "event_id",
    "time_spans",
    "event_description",
    "grounding_query",
    "question",
    "options",
    "correct_answer",
    "stage1_reason",
    "stage2_reason",
)


@dataclass(frozen=True)
class QARecord:
    """One training instance. Not validated on construction; see :func:`schema_problems`."""

    video_id: str
    event_id: str
    time_spans: SpanSet
    event_description: str
    grounding_query: str
    question: str
    options: dict
    correct_answer: str | None
    stage1_reason: str | None = None
    stage2_reason: str | None = None

    @property
    def item_id(self) -> str:
        return record_id(self.video_id, self.event_id)

    @property
    def correct_text(self) -> str | None:
        return self.options.get(self.correct_answer) if self.correct_answer else None


def record_id(video_id: str, event_id: str) -> str:
    return f"{video_id}:{event_id}"


def quantize_spans(spans: SpanSet | Iterable[Sequence[float]], duration_s: float | None = None) -> SpanSet:
    """Round to the two-decimal wire precision, then renormalize."""
    pairs = spans.to_pairs() if isinstance(spans, SpanSet) else spans
    q = [(float(format_seconds(s)), float(format_seconds(e))) for s, e in pairs]
    return normalize_spans(q, duration_s)[0]


# -- providers -------------------------------------------------------------


@dataclass(frozen=True)
class QuestionDraft:
    question: str
    correct_text: str
    stage1_reason: str | None = None
    stage2_reason: str | None = None


class QuestionWriter(Protocol):
    def grounding_query(self, node: EventNode, attempt: int) -> str: ...

    def write_question(self, node: EventNode, spans: SpanSet) -> QuestionDraft: ...


def _spans_phrase(spans: SpanSet) -> str:
    return " and ".join(f"{format_seconds(s.start_s)}s to {format_seconds(s.end_s)}s" for s in spans)


_TEMPLATES = (
    "Which event is shown from {spans}?",
    "What happens on screen from {spans}?",
    "Which activity takes place from {spans}?",
    "During {spans}, which of these events occurs?",
)


def _stable_index(video_id: str, event_id: str, n: int) -> int:
    return int(hashlib.sha256(f"{video_id}:{event_id}".encode()).hexdigest(), 16) % n


class TemplateWriter:
    """Deterministic stand-in for an LLM question writer.

    The phrasing template is picked by a stable hash of the event.
    """

    def grounding_query(self, node: EventNode, attempt: int) -> str:
        desc = node.description.rstrip(".")
        return f"Locate when {desc[:1].lower()}{desc[1:]}"

    def write_question(self, node: EventNode, spans: SpanSet) -> QuestionDraft:
        n = len(spans)
        return QuestionDraft(
            question=_TEMPLATES[_stable_index(node.video_id, node.event_id, len(_TEMPLATES))].format(
                spans=_spans_phrase(spans)
            ),
            correct_text=node.description,
            stage1_reason=f"The event occupies {n} span{'s' if n > 1 else ''} totalling "
            f"{format_seconds(spans.total_length)}s.",
            stage2_reason="The frames inside the span show exactly this event.",
        )


class LocalityChecker(Protocol):
    def check(self, record: QARecord) -> tuple[bool, str]: ...


class TextOnlyChecker(Protocol):
    def answer_without_video(self, record: QARecord) -> str | None: ...


_TIME_MENTION = re.compile(r"(\d+(?:\.\d+)?)\s*s\b")
_HOLISTIC = ("whole video", "entire video", "overall", "throughout")


class SpanLocalityChecker:
    """Rejects questions that cite times outside the gold spans or ask for holistic summaries."""

    def __init__(self, tolerance_s: float = 0.01):
        self.tolerance_s = tolerance_s

    def check(self, record: QARecord) -> tuple[bool, str]:
        q = record.question.lower()
        for term in _HOLISTIC:
            if term in q:
                return False, f"holistic phrasing {term!r}"
        for m in _TIME_MENTION.finditer(q):
            t = float(m.group(1))
            if not any(s.start_s - self.tolerance_s <= t <= s.end_s + self.tolerance_s for s in record.time_spans):
                return False, f"question cites {t}s outside the gold spans"
        return True, "ok"


class OverlapGuesser:
    """Text-only baseline: picks the option sharing the most words with the question.

    Abstains (None) when no option shares a word or the best score is
    tied, so the verdict never depends on option order.
    """

    def answer_without_video(self, record: QARecord) -> str | None:
        qt = set(tokens(record.question))
        scores = {label: len(qt & set(tokens(record.options.get(label, "")))) for label in OPTIONS}
        top = max(scores.values())
        winners = [label for label, v in scores.items() if v == top]
        return winners[0] if top > 0 and len(winners) == 1 else None


@dataclass
class ReviewCheckers:
    locality: LocalityChecker = field(default_factory=SpanLocalityChecker)
    text_only: TextOnlyChecker = field(default_factory=OverlapGuesser)
    deictic_terms: tuple[str, ...] = DEICTIC_TERMS
    vague_terms: tuple[str, ...] = VAGUE_TERMS


# -- construction ------------------------------------------------------------


def _contains_term(text: str, terms: Iterable[str]) -> str | None:
    low = text.lower()
    for term in terms:
        if re.search(rf"\b{re.escape(term)}\b", low):
            return term
    return None


def _rng(seed: int, *parts: str) -> random.Random:
    return random.Random(":".join([str(seed), *parts]))


def build_record(
    node: EventNode,
    same_video_pool: Sequence[EventNode],
    writer: QuestionWriter | None = None,
    seed: int = 0,
    deictic_terms: Sequence[str] = DEICTIC_TERMS,
) -> QARecord:
    """Turn one event node into a four-option record.

    Other occurrences of the same event (identical description) in the
    pool contribute their spans, yielding a multi-span gold set. Three
    distractors are drawn from the remaining events' descriptions.
    """
    writer = writer or TemplateWriter()
    spans = [p for p in node.spans.to_pairs()]
    others = []
    for other in same_video_pool:
        if other.event_id == node.event_id:
            continue
        if other.description == node.description:
            spans.extend(other.spans.to_pairs())
        else:
            others.append(other)
    gold = quantize_spans(spans)
    if not gold:
        raise ValueError(f"event {node.event_id!r} has no valid spans")

    distractor_texts = sorted({o.description for o in others if o.description.strip()})
    if len(distractor_texts) < 3:
        raise ValueError(
            f"event {node.event_id!r}: need >= 3 distinct same-video distractors, found {len(distractor_texts)}"
        )

    query = writer.grounding_query(node, 0)
    if _contains_term(query, deictic_terms):
        query = writer.grounding_query(node, 1)
        term = _contains_term(query, deictic_terms)
        if term:
            raise ValueError(f"event {node.event_id!r}: grounding query stays deictic ({term!r})")

    draft = writer.write_question(node, gold)
    rng = _rng(seed, node.video_id, node.event_id)
    pool = [t for t in distractor_texts if t != draft.correct_text]
    distractors = rng.sample(pool, 3)
    texts = [draft.correct_text] + distractors
    rng.shuffle(texts)
    options = dict(zip(OPTIONS, texts))
    correct = OPTIONS[texts.index(draft.correct_text)]
    return QARecord(
        video_id=node.video_id,
        event_id=node.event_id,
        time_spans=gold,
        event_description=node.description,
        grounding_query=query,
        question=draft.question,
        options=options,
        correct_answer=correct,
        stage1_reason=draft.stage1_reason,
        stage2_reason=draft.stage2_reason,
    )


# -- review ------------------------------------------------------------------

GATES = ("schema", "temporal_locality", "language", "text_only", "dedup")


@dataclass(frozen=True)
class Verdict:
    passed: bool
    reason: str = ""


@dataclass
class ReviewReport:
    item_id: str
    verdicts: dict = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return all(v.passed for v in self.verdicts.values()) and bool(self.verdicts)

    @property
    def failed_gate(self) -> str | None:
        for g in GATES:
            v = self.verdicts.get(g)
            if v is not None and not v.passed:
                return g
        return None


def schema_problems(record: QARecord) -> list[str]:
    problems = []
    opts = record.options if isinstance(record.options, dict) else {}
    if sorted(opts) != list(OPTIONS):
        problems.append(f"options must be keyed exactly {','.join(OPTIONS)}")
    texts = [str(opts.get(k, "")).strip() for k in OPTIONS]
    if any(not t for t in texts):
        problems.append("empty option text")
    if len(set(texts)) != len(texts):
        problems.append("duplicate option texts")
    if record.correct_answer not in OPTIONS:
        problems.append("correct_answer missing or not a single option label")
    if not isinstance(record.time_spans, SpanSet) or not record.time_spans:
        problems.append("time_spans empty")
    if not (record.question or "").strip():
        problems.append("question empty")
    if not (record.grounding_query or "").strip():
        problems.append("grounding_query empty")
    if not record.video_id or not record.event_id:
        problems.append("video_id/event_id missing")
    return problems


def review_record(record: QARecord, checkers: ReviewCheckers | None = None) -> ReviewReport:
    """Run the gates in order, stopping at the first failure.

    The dedup gate is batch-level and recorded by :func:`build_dataset`.
    """
    checkers = checkers or ReviewCheckers()
    report = ReviewReport(record_id(record.video_id, record.event_id))
    problems = schema_problems(record)
    report.verdicts["schema"] = Verdict(not problems, "; ".join(problems) or "ok")
    if problems:
        return report

    ok, reason = checkers.locality.check(record)
    report.verdicts["temporal_locality"] = Verdict(ok, reason)
    if not ok:
        return report

    term = _contains_term(record.question, checkers.deictic_terms) or _contains_term(
        record.grounding_query, checkers.deictic_terms
    )
    if term:
        report.verdicts["language"] = Verdict(False, f"deictic phrasing {term!r}")
        return report
    term = _contains_term(record.question, checkers.vague_terms)
    if term:
        report.verdicts["language"] = Verdict(False, f"vague stem {term!r}")
        return report
    report.verdicts["language"] = Verdict(True, "ok")

    guess = checkers.text_only.answer_without_video(record)
    if guess is not None and guess == record.correct_answer:
        report.verdicts["text_only"] = Verdict(False, "answerable without the video")
    else:
        report.verdicts["text_only"] = Verdict(True, "ok")
    return report


def _dedup(records: Sequence[QARecord], dup_threshold: float) -> tuple[list[QARecord], list[QARecord]]:
    kept_by_video: dict[str, list[QARecord]] = {}
    kept, dropped = [], []
    for r in records:
        prior = kept_by_video.setdefault(r.video_id, [])
        q = r.question.lower()
        if any(token_jaccard(q, p.question.lower()) >= dup_threshold for p in prior):
            dropped.append(r)
            continue
        prior.append(r)
        kept.append(r)
    return kept, dropped


def _relabel(record: QARecord, label: str) -> QARecord:
    """Swap option texts so the correct one sits under ``label``."""
    if record.correct_answer == label:
        return record
    opts = dict(record.options)
    opts[label], opts[record.correct_answer] = opts[record.correct_answer], opts[label]
    return replace(record, options=opts, correct_answer=label)


def dedup_and_balance(records: Sequence[QARecord], dup_threshold: float = 0.8, seed: int = 0) -> list[QARecord]:
    """Drop near-duplicate questions per video, then balance correct labels.

    Survivors are visited in a seeded shuffled order and assigned labels
    round-robin, so every label count is within one of N/4.
    """
    if not 0 < dup_threshold <= 1:
        raise ValueError("dup_threshold must lie in (0, 1]")
    kept, _ = _dedup(records, dup_threshold)
    order = list(range(len(kept)))
    random.Random(seed).shuffle(order)
    out = list(kept)
    for rank, i in enumerate(order):
        out[i] = _relabel(kept[i], OPTIONS[rank % len(OPTIONS)])
    return out


# -- splits and stats --------------------------------------------------------


@dataclass(frozen=True)
class SplitManifest:
    splits: dict

    def split_of(self, video_id: str) -> str:
        for name, vids in self.splits.items():
            if video_id in vids:
                return name
        raise KeyError(video_id)

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.splits.items()}


def split_by_video(
    records: Sequence[QARecord],
    ratios: Sequence[float] = (0.90, 0.05, 0.05),
    seed: int = 0,
    names: Sequence[str] = ("train", "val", "test"),
) -> SplitManifest:
    """Assign whole videos to splits.

    Videos are ordered by a seeded hash and cut into contiguous blocks
    sized by largest-remainder rounding; every split with a non-zero ratio
    gets at least one video.
    """
    if len(ratios) != len(names):
        raise ValueError("ratios and names differ in length")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be non-negative and sum to 1")
    videos = sorted({r.video_id for r in records})
    active = [i for i, r in enumerate(ratios) if r > 0]
    if len(videos) < len(active):
        raise ValueError(f"{len(videos)} videos cannot fill {len(active)} splits")

    def key(v: str) -> str:
        return hashlib.sha256(f"{seed}:{v}".encode()).hexdigest()

    videos.sort(key=key)
    n = len(videos)
    quotas = [n * r for r in ratios]
    counts = [int(q) for q in quotas]
    for i in active:
        counts[i] = max(counts[i], 1)
    while sum(counts) > n:
        i = max((j for j in active if counts[j] > 1), key=lambda j: (counts[j] - quotas[j], j))
        counts[i] -= 1
    rest = n - sum(counts)
    for i in sorted(active, key=lambda j: (-(quotas[j] - counts[j]), j))[:rest]:
        counts[i] += 1
    splits, start = {}, 0
    for name, c in zip(names, counts):
        splits[name] = sorted(videos[start : start + c])
        start += c
    return SplitManifest(splits)


@dataclass(frozen=True)
class DatasetStats:
    count: int
    span_length_mean: float
    span_length_median: float
    span_length_percentiles: dict
    multi_span_proportion: float
    per_video_counts: dict
    label_histogram: dict

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "span_length_mean": self.span_length_mean,
            "span_length_median": self.span_length_median,
            "span_length_percentiles": self.span_length_percentiles,
            "multi_span_proportion": self.multi_span_proportion,
            "per_video_counts": self.per_video_counts,
            "label_histogram": self.label_histogram,
        }


def dataset_stats(records: Sequence[QARecord], percentiles: Sequence[int] = (10, 25, 75, 90)) -> DatasetStats:
    if not records:
        raise ValueError("no records")
    lengths = np.array([r.time_spans.total_length for r in records], dtype=float)
    labels = Counter(r.correct_answer for r in records)
    return DatasetStats(
        count=len(records),
        span_length_mean=float(lengths.mean()),
        span_length_median=float(np.median(lengths)),
        span_length_percentiles={f"p{p}": float(np.percentile(lengths, p)) for p in percentiles},
        multi_span_proportion=sum(1 for r in records if len(r.time_spans) > 1) / len(records),
        per_video_counts=dict(sorted(Counter(r.video_id for r in records).items())),
        label_histogram={k: labels.get(k, 0) for k in OPTIONS},
    )


# -- end to end --------------------------------------------------------------


@dataclass
class BuildResult:
    records: list[QARecord]
    reports: list[ReviewReport]
    errors: dict


def build_dataset(
    graphs: Iterable[EventGraph],
    seed: int,
    writer: QuestionWriter | None = None,
    checkers: ReviewCheckers | None = None,
    dup_threshold: float = 0.8,
) -> BuildResult:
    """Records for every event of every graph, reviewed, deduplicated, balanced.

    Output is ordered by (video_id, event_id).
    """
    checkers = checkers or ReviewCheckers()
    candidates, reports, errors = [], [], {}
    for g in sorted(graphs, key=lambda g: g.video_id):
        for node in g.nodes:
            node = node if node.video_id else replace(node, video_id=g.video_id)
            pool = [n if n.video_id else replace(n, video_id=g.video_id) for n in g.nodes]
            try:
                rec = build_record(node, pool, writer, seed, checkers.deictic_terms)
            except ValueError as e:
                errors[record_id(g.video_id, node.event_id)] = str(e)
                continue
            rep = review_record(rec, checkers)
            reports.append(rep)
            if rep.accepted:
                candidates.append(rec)
    candidates.sort(key=lambda r: (r.video_id, r.event_id))
    kept, dropped = _dedup(candidates, dup_threshold)
    by_id = {rep.item_id: rep for rep in reports}
    for r in kept:
        by_id[r.item_id].verdicts["dedup"] = Verdict(True, "ok")
    for r in dropped:
        by_id[r.item_id].verdicts["dedup"] = Verdict(False, "near-duplicate question in the same video")
    records = dedup_and_balance(kept, dup_threshold, seed)
    return BuildResult(records, reports, errors)


# -- serialization -------------------------------------------------------------


def record_to_dict(record: QARecord) -> dict:
    return {
        "video_id": record.video_id,
        "event_id": record.event_id,
        "time_spans": [[float(format_seconds(s)), float(format_seconds(e))] for s, e in record.time_spans.to_pairs()],
        "event_description": record.event_description,
        "grounding_query": record.grounding_query,
        "question": record.question,
        "options": {k: record.options[k] for k in sorted(record.options)},
        "correct_answer": record.correct_answer,
        "stage1_reason": record.stage1_reason,
        "stage2_reason": record.stage2_reason,
    }


def record_from_dict(d: dict) -> QARecord:
    """Lenient load; gold spans must normalize to a non-empty set."""
    spans, _ = normalize_spans(d.get("time_spans") or [], None)
    if not spans:
        raise ValueError(f"record {d.get('video_id')}:{d.get('event_id')} has no valid gold spans")
    return QARecord(
        video_id=str(d.get("video_id", "")),
        event_id=str(d.get("event_id", "")),
        time_spans=spans,
        event_description=d.get("event_description", ""),
        grounding_query=d.get("grounding_query", ""),
        question=d.get("question", ""),
        options=dict(d.get("options") or {}),
        correct_answer=d.get("correct_answer"),
        stage1_reason=d.get("stage1_reason"),
        stage2_reason=d.get("stage2_reason"),
    )


def dump_records(records: Iterable[QARecord]) -> str:
    return "".join(json.dumps(record_to_dict(r), ensure_ascii=False) + "\n" for r in records)


def write_records(records: Iterable[QARecord], path: str | Path) -> None:
    Path(path).write_text(dump_records(records), encoding="utf-8")


def read_records(path: str | Path) -> list[QARecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(record_from_dict(json.loads(line)))
            except (json.JSONDecodeError, ValueError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: {e}") from e
    return out
