"""Span-grounded question answering over long videos.

The commonly used names are re-exported here; each submodule covers one
stage of the workflow.
"""
from .spans import Span, SpanSet, interval_relation, mean_iou, multi_span_tiou, normalize_spans, recall_at_iou
from .grammar import parse_response, render_response, serialize_frames
from .frames import BudgetConfig, FrameSource, allocate_budget, sample_global, sample_spans
from .rewards import RewardConfig, composite_reward, score_response
from .grpo import Rollout, group_advantages, grpo_objective
from .events import EventGraph, build_graph
from .dataset import QARecord, build_dataset, split_by_video
from .pipeline import PRESETS, PipelineConfig, run_pipeline
from .evaluation import eval_grounding, eval_qa

__version__ = "0.1.0"

__all__ = [
    "Span", "SpanSet", "interval_relation", "mean_iou", "multi_span_tiou", "normalize_spans", "recall_at_iou",
    "parse_response", "render_response", "serialize_frames",
    "BudgetConfig", "FrameSource", "allocate_budget", "sample_global", "sample_spans",
    "RewardConfig", "composite_reward", "score_response",
    "Rollout", "group_advantages", "grpo_objective",
    "EventGraph", "build_graph",
    "QARecord", "build_dataset", "split_by_video",
    "PRESETS", "PipelineConfig", "run_pipeline",
    "eval_grounding", "eval_qa",
    "__version__",
]
