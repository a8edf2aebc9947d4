"""Grounding and multiple-choice evaluation over prediction / gold files."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dataset import QARecord, read_records
from .spans import SpanSet, mean_iou, multi_span_tiou, normalize_spans, recall_at_iou

__all__ = [
    "DEFAULT_THRESHOLDS",
    "EvalReport",
    "read_predictions",
    "grounding_ious",
    "eval_grounding",
    "eval_qa",
    "eval_grounding_files",
    "eval_qa_files",
    "format_table",
    "report_records",
]

DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass
class EvalReport:
    count: int
    recall: dict = field(default_factory=dict)
    miou: float | None = None
    accuracy: float | None = None
    task_accuracy: dict = field(default_factory=dict)
    macro_average: float | None = None

    def to_dict(self) -> dict:
        d = {"count": self.count}
        if self.recall:
            d["recall"] = {f"R@{t:g}": v for t, v in self.recall.items()}
            d["mIoU"] = self.miou
        if self.accuracy is not None:
            d["accuracy"] = self.accuracy
        if self.task_accuracy:
            d["task_accuracy"] = dict(self.task_accuracy)
            d["M-Avg"] = self.macro_average
        return d


def read_predictions(path: str | Path) -> list[dict]:
    out = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from e
            if "item_id" not in rec:
                raise ValueError(f"{path}:{lineno}: missing item_id")
            out.append(rec)
    return out


def _index_predictions(preds: Iterable[Mapping], gold_ids: set[str]) -> dict[str, Mapping]:
    index = {}
    for p in preds:
        pid = str(p["item_id"])
        if pid in index:
            raise ValueError(f"duplicate prediction id {pid!r}")
        if pid not in gold_ids:
            raise ValueError(f"prediction id {pid!r} has no gold item")
        index[pid] = p
    return index


def _gold_index(gold: Sequence[QARecord]) -> dict[str, QARecord]:
    index = {}
    for g in gold:
        if g.item_id in index:
            raise ValueError(f"duplicate gold id {g.item_id!r}")
        index[g.item_id] = g
    return index


def grounding_ious(
    preds: Iterable[Mapping],
    gold: Sequence[QARecord],
    single_best: bool = False,
) -> dict[str, float]:
    """Per-item IoU, keyed by gold id; missing predictions score 0.

    By default the prediction's spans are unioned and compared with the
    gold union. ``single_best`` takes the best single predicted span, as
    single-span benchmarks do.
    """
    gold_by_id = _gold_index(gold)
    pred_by_id = _index_predictions(preds, set(gold_by_id))
    ious = {}
    for gid, g in sorted(gold_by_id.items()):
        p = pred_by_id.get(gid)
        pairs = (p or {}).get("spans") or []
        pred_set, _ = normalize_spans(pairs, None)
        if single_best:
            ious[gid] = max((multi_span_tiou(SpanSet((s,)), g.time_spans) for s in pred_set), default=0.0)
        else:
            ious[gid] = multi_span_tiou(pred_set, g.time_spans)
    return ious


def eval_grounding(
    preds: Iterable[Mapping],
    gold: Sequence[QARecord],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    single_best: bool = False,
) -> EvalReport:
    ious = list(grounding_ious(preds, gold, single_best).values())
    if not ious:
        raise ValueError("no gold items")
    return EvalReport(
        count=len(ious),
        recall={t: recall_at_iou(ious, t) for t in thresholds},
        miou=mean_iou(ious),
    )


def eval_qa(
    preds: Iterable[Mapping],
    gold: Sequence[QARecord],
    task_labels: Mapping[str, str] | None = None,
) -> EvalReport:
    """Accuracy in percent; with task labels, per-task accuracy and their unweighted mean."""
    gold_by_id = _gold_index(gold)
    if not gold_by_id:
        raise ValueError("no gold items")
    pred_by_id = _index_predictions(preds, set(gold_by_id))
    hits = {
        gid: (pred_by_id.get(gid) or {}).get("answer") == g.correct_answer and g.correct_answer is not None
        for gid, g in gold_by_id.items()
    }
    report = EvalReport(count=len(hits), accuracy=100.0 * sum(hits.values()) / len(hits))
    if task_labels:
        by_task = defaultdict(list)
        for gid, hit in hits.items():
            if gid not in task_labels:
                raise ValueError(f"no task label for {gid!r}")
            by_task[task_labels[gid]].append(hit)
        report.task_accuracy = {t: 100.0 * sum(v) / len(v) for t, v in sorted(by_task.items())}
        report.macro_average = math.fsum(report.task_accuracy.values()) / len(report.task_accuracy)
    return report


def eval_grounding_files(pred_file, gold_file, thresholds=DEFAULT_THRESHOLDS, single_best=False) -> EvalReport:
    return eval_grounding(read_predictions(pred_file), read_records(gold_file), thresholds, single_best)


def eval_qa_files(pred_file, gold_file, task_file=None) -> EvalReport:
    labels = None
    if task_file is not None:
        labels = {str(r["item_id"]): str(r["task"]) for r in read_predictions(task_file)}
    return eval_qa(read_predictions(pred_file), read_records(gold_file), labels)


def format_table(report: EvalReport) -> str:
    """Aligned plain-text table of every metric in the report."""
    rows = [("items", str(report.count))]
    for t, v in report.recall.items():
        rows.append((f"R@{t:g}", f"{v:.2f}"))
    if report.miou is not None:
        rows.append(("mIoU", f"{report.miou:.2f}"))
    if report.accuracy is not None:
        rows.append(("accuracy", f"{report.accuracy:.2f}"))
    for t, v in report.task_accuracy.items():
        rows.append((f"acc[{t}]", f"{v:.2f}"))
    if report.macro_average is not None:
        rows.append(("M-Avg", f"{report.macro_average:.2f}"))
    w = max(len(k) for k, _ in rows)
    vw = max(len(v) for _, v in rows)
    lines = [f"{'metric':<{w}}  {'value':>{vw}}", f"{'-' * w}  {'-' * vw}"]
    lines += [f"{k:<{w}}  {v:>{vw}}" for k, v in rows]
    return "\n".join(lines)


def report_records(report: EvalReport) -> list[dict]:
    """One ``{"metric", "value"}`` record per metric."""
    out = [{"metric": "items", "value": report.count}]
    out += [{"metric": f"R@{t:g}", "value": v} for t, v in report.recall.items()]
    if report.miou is not None:
        out.append({"metric": "mIoU", "value": report.miou})
    if report.accuracy is not None:
        out.append({"metric": "accuracy", "value": report.accuracy})
    out += [{"metric": f"acc[{t}]", "value": v} for t, v in report.task_accuracy.items()]
    if report.macro_average is not None:
        out.append({"metric": "M-Avg", "value": report.macro_average})
    return out
