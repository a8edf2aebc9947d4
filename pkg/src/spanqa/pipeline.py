"""Two-stage skim-then-zoom inference against a backend.

Stage 1 sends a uniform global skim with the grounding query and parses
evidence spans. Stage 2 re-samples frames only inside those spans and asks
the original multiple-choice question. Presets A-C are the single-stage
ablations; D is the full two-stage protocol.
"""
from __future__ import annotations

import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .backends import Backend, BackendError, BackendRequest, call_with_retry
from .dataset import QARecord
from .frames import BudgetConfig, FrameSelection, FrameSource, sample_global, sample_spans
from .grammar import OPTIONS, parse_response, render_span, serialize_frames
from .rewards import RewardBreakdown, RewardConfig, predicted_spans, score_response
from .spans import SpanSet

__all__ = [
    "Preset",
    "PRESETS",
    "PipelineConfig",
    "Stage1Result",
    "Stage2Result",
    "PipelineResult",
    "ground_prompt",
    "answer_prompt",
    "single_stage_prompt",
    "unified_context",
    "run_stage1",
    "run_stage2",
    "run_pipeline",
    "run_batch",
    "result_to_dict",
    "write_results",
    "AblationRow",
    "ablation_table",
    "format_ablation",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Preset:
    name: str
    two_stage: bool
    timestamps: bool
    answer_template: bool  # stage-2 answering prompt (with evidence spans)
    description: str = ""


PRESETS = {
    "A": Preset("A", False, False, False, "single stage, no timestamps"),
    "B": Preset("B", False, True, False, "single stage with timestamp injection"),
    "C": Preset("C", False, True, True, "stage-2 prompt over the full video with timestamps"),
    "D": Preset("D", True, True, True, "two-stage ground then answer with timestamps"),
}


@dataclass(frozen=True)
class PipelineConfig:
    budget: BudgetConfig = BudgetConfig()
    reward: RewardConfig = RewardConfig()
    preset: str = "D"
    mode: str = "eval"  # "train" enables teacher forcing
    teacher_force_ratio: float = 0.5
    retries: int = 2
    backoff_s: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.mode not in ("eval", "train"):
            raise ValueError("mode must be 'eval' or 'train'")
        if not 0 <= self.teacher_force_ratio <= 1:
            raise ValueError("teacher_force_ratio must lie in [0, 1]")


def _options_block(options) -> str:
    return "\n".join(f"{k}. {options.get(k, '')}" for k in OPTIONS)


def ground_prompt(frames_text: str, record: QARecord, m_max: int) -> str:
    return (
        f"{frames_text}\n"
        f"Question: {record.question}\n"
        f"Grounding query: {record.grounding_query}\n"
        f"Locate the moments needed to answer the question. Emit up to {m_max} spans as "
        f"<span>[start,end]</span> in seconds with two decimals, then a brief rationale."
    )


def answer_prompt(frames_text: str, record: QARecord, spans: SpanSet) -> str:
    spans_text = " ".join(render_span(s.start_s, s.end_s) for s in spans)
    return (
        f"{frames_text}\n"
        f"Evidence spans: {spans_text}\n"
        f"Question: {record.question}\n"
        f"{_options_block(record.options)}\n"
        f"Using only the frames above, answer with exactly one option inside "
        f"<answer></answer> and a short justification."
    )


def single_stage_prompt(frames_text: str, record: QARecord) -> str:
    return (
        f"{frames_text}\n"
        f"Question: {record.question}\n"
        f"{_options_block(record.options)}\n"
        f"Answer with exactly one option inside <answer></answer>."
    )


def unified_context(*frame_texts: str) -> str:
    """Stage-1 and stage-2 frame streams joined in order (the policy's full visual context)."""
    return " ".join(t for t in frame_texts if t)


@dataclass(frozen=True)
class Stage1Result:
    spans: SpanSet
    raw_text: str
    selection: FrameSelection
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class Stage2Result:
    answer: str | None
    raw_text: str
    selection: FrameSelection
    failed: bool = False
    error: str = ""


def _call(backend: Backend, request: BackendRequest, config: PipelineConfig) -> tuple[str, str]:
    try:
        return call_with_retry(backend, request, config.retries, config.backoff_s), ""
    except BackendError as e:
        log.warning("backend failed for %s (%s): %s", request.item_id, request.stage, e)
        return "", str(e)


def run_stage1(
    video: FrameSource,
    record: QARecord,
    backend: Backend,
    config: PipelineConfig = PipelineConfig(),
) -> Stage1Result:
    budget = config.budget
    selection = sample_global(video, budget.n_g)
    frames_text = serialize_frames(selection.frames)
    request = BackendRequest(
        item_id=record.item_id,
        stage="ground",
        prompt_text=ground_prompt(frames_text, record, budget.m_max),
        frame_timestamps=tuple(selection.timestamps),
        duration_s=video.duration_s,
        question=record.question,
        options=dict(record.options),
        grounding_query=record.grounding_query,
    )
    raw, err = _call(backend, request, config)
    if err:
        return Stage1Result(SpanSet(), raw, selection, failed=True, error=err)
    spans = predicted_spans(parse_response(raw), video.duration_s, budget.k_spans)
    return Stage1Result(spans, raw, selection)


def _answer_request(
    video: FrameSource,
    record: QARecord,
    selection: FrameSelection,
    preset: Preset,
    spans: SpanSet,
) -> BackendRequest:
    frames_text = serialize_frames(selection.frames, timestamps=preset.timestamps)
    if preset.answer_template:
        prompt = answer_prompt(frames_text, record, spans)
    else:
        prompt = single_stage_prompt(frames_text, record)
    return BackendRequest(
        item_id=record.item_id,
        stage="answer",
        prompt_text=prompt,
        frame_timestamps=tuple(selection.timestamps),
        duration_s=video.duration_s,
        question=record.question,
        options=dict(record.options),
        spans=tuple(spans.to_pairs()) if preset.answer_template else (),
    )


def run_stage2(
    video: FrameSource,
    spans: SpanSet,
    record: QARecord,
    backend: Backend,
    config: PipelineConfig = PipelineConfig(),
) -> Stage2Result:
    """Answer from ``n_l`` frames inside ``spans``; every frame lies in their union."""
    budget = config.budget
    selection = sample_spans(video, spans, budget.n_l, budget.cap_factor)
    request = _answer_request(video, record, selection, PRESETS["D"], spans)
    raw, err = _call(backend, request, config)
    return Stage2Result(parse_response(raw).answer, raw, selection, bool(err), err)


@dataclass(frozen=True)
class PipelineResult:
    item_id: str
    preset: str
    spans: SpanSet
    answer: str | None
    stage1_raw: str
    stage2_raw: str
    frames_global: int
    frames_local: int
    shortfall: int
    stage2_timestamps: tuple[float, ...] = ()
    reward: RewardBreakdown | None = None
    fallback: bool = False
    teacher_forced: bool = False
    failed: bool = False
    error: str = ""

    @property
    def interleaved_text(self) -> str:
        return "\n".join(t for t in (self.stage1_raw, self.stage2_raw) if t)

    @property
    def frames_used(self) -> int:
        return self.frames_global + self.frames_local


def _teacher_force(record: QARecord, config: PipelineConfig) -> bool:
    if config.mode != "train" or config.teacher_force_ratio <= 0:
        return False
    h = hashlib.sha256(f"{config.seed}:{record.item_id}".encode()).hexdigest()
    return random.Random(int(h, 16)).random() < config.teacher_force_ratio


def run_pipeline(
    video: FrameSource,
    record: QARecord,
    backend: Backend,
    config: PipelineConfig = PipelineConfig(),
    step: int | None = None,
) -> PipelineResult:
    preset = PRESETS[config.preset]
    budget = config.budget
    stage1_raw, s1_failed, errors = "", False, []
    fallback = teacher_forced = False
    spans = SpanSet()

    if preset.two_stage:
        s1 = run_stage1(video, record, backend, config)
        stage1_raw, spans, s1_failed = s1.raw_text, s1.spans, s1.failed
        if s1.error:
            errors.append(s1.error)
        n_global = len(s1.selection.frames)
        zoom = spans
        if _teacher_force(record, config):
            zoom, teacher_forced = record.time_spans, True
        if zoom:
            s2 = run_stage2(video, zoom, record, backend, config)
            local_sel, stage2_raw, answer = s2.selection, s2.raw_text, s2.answer
            s2_err = s2.error
        else:
            # no usable spans: uniform sweep over the whole timeline
            fallback = True
            local_sel = sample_global(video, budget.n_l) if budget.n_l else FrameSelection((), 0)
            req = _answer_request(video, record, local_sel, preset, SpanSet.from_pairs([(0.0, video.duration_s)]))
            stage2_raw, s2_err = _call(backend, req, config)
            answer = parse_response(stage2_raw).answer
        requested = budget.n_g + budget.n_l
        n_local = len(local_sel.frames)
    else:
        selection = sample_global(video, budget.total)
        full = SpanSet.from_pairs([(0.0, video.duration_s)])
        req = _answer_request(video, record, selection, preset, full)
        stage2_raw, s2_err = _call(backend, req, config)
        answer = parse_response(stage2_raw).answer
        local_sel, n_global, n_local, requested = selection, 0, len(selection.frames), budget.total
    if s2_err:
        errors.append(s2_err)

    result = PipelineResult(
        item_id=record.item_id,
        preset=preset.name,
        spans=spans,
        answer=answer,
        stage1_raw=stage1_raw,
        stage2_raw=stage2_raw,
        frames_global=n_global,
        frames_local=n_local,
        shortfall=requested - n_global - n_local,
        stage2_timestamps=tuple(local_sel.timestamps),
        fallback=fallback,
        teacher_forced=teacher_forced,
        failed=s1_failed or bool(s2_err),
        error="; ".join(errors),
    )
    if record.time_spans and record.correct_answer in OPTIONS:
        reward = score_response(
            result.interleaved_text,
            record.time_spans,
            record.correct_answer,
            video.duration_s,
            config.reward,
            step=step,
        )
        result = replace(result, reward=reward)
    return result


def run_batch(
    items: Sequence[tuple[FrameSource, QARecord]],
    backend: Backend,
    config: PipelineConfig = PipelineConfig(),
    jobs: int = 1,
) -> list[PipelineResult]:
    """Run many records with at most ``jobs`` in flight; output sorted by item id."""

    def one(item):
        video, record = item
        return run_pipeline(video, record, backend, config)

    if jobs <= 1:
        results = [one(it) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, items))
    return sorted(results, key=lambda r: r.item_id)


def result_to_dict(r: PipelineResult) -> dict:
    d = {
        "item_id": r.item_id,
        "preset": r.preset,
        "spans": [list(p) for p in r.spans.to_pairs()],
        "answer": r.answer,
        "response_text": r.interleaved_text,
        "frames_global": r.frames_global,
        "frames_local": r.frames_local,
        "shortfall": r.shortfall,
        "fallback": r.fallback,
        "teacher_forced": r.teacher_forced,
        "failed": r.failed,
    }
    if r.reward is not None:
        d.update(r.reward.as_dict())
    if r.error:
        d["error"] = r.error
    return d


def write_results(results: Sequence[PipelineResult], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for r in results:
            fh.write(json.dumps(result_to_dict(r)) + "\n")


@dataclass(frozen=True)
class AblationRow:
    preset: str
    description: str
    accuracy: float
    miou: float


def ablation_table(
    items: Sequence[tuple[FrameSource, QARecord]],
    backend: Backend,
    config: PipelineConfig = PipelineConfig(),
    presets: Sequence[str] = ("A", "B", "C", "D"),
    jobs: int = 1,
) -> list[AblationRow]:
    """Accuracy and mean tIoU (both in percent) for each preset over the same items."""
    if not items:
        raise ValueError("no items")
    rows = []
    for name in presets:
        results = run_batch(items, backend, replace(config, preset=name), jobs)
        acc = 100.0 * sum(r.reward.correct for r in results) / len(results)
        miou = 100.0 * sum(r.reward.tiou for r in results) / len(results)
        rows.append(AblationRow(name, PRESETS[name].description, acc, miou))
    return rows


def format_ablation(rows: Sequence[AblationRow]) -> str:
    w = max(len(f"{r.preset}) {r.description}") for r in rows)
    lines = [f"{'config':<{w}}  {'accuracy':>8}  {'mIoU':>6}", f"{'-' * w}  {'-' * 8}  {'-' * 6}"]
    for r in rows:
        lines.append(f"{r.preset + ') ' + r.description:<{w}}  {r.accuracy:>8.2f}  {r.miou:>6.2f}")
    return "\n".join(lines)
