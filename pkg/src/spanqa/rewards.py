"""Composite span/answer reward.

``R = (1 - gamma) * R_loc + gamma * R_ans`` with

* ``R_loc = (1 - alpha) * tIoU + alpha * fmt_time``
* ``R_ans = (1 - beta) * [answer == gold] + beta * fmt_ans``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .grammar import InterleavedResponse, fmt_ans_score, fmt_time_score, parse_response
from .spans import SpanSet, multi_span_tiou, normalize_spans

__all__ = [
    "RewardConfig",
    "RewardBreakdown",
    "loc_reward",
    "ans_reward",
    "composite_reward",
    "gamma_schedule",
    "shaped_tvg_reward",
    "length_penalty",
    "predicted_spans",
    "score_response",
]


def _mix(a: float, b: float, w: float) -> float:
    """``(1 - w) * a + w * b``, exact at ``a == b`` and kept inside [a, b]."""
    v = a + w * (b - a)
    return min(max(v, min(a, b)), max(a, b))


def _check_unit(name: str, v: float) -> None:
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.1
    beta: float = 0.1
    gamma0: float = 0.3
    gamma1: float = 0.7
    ramp_steps: int = 1000
    shaping_thresholds: tuple[tuple[float, float], ...] = ()
    length_penalty_per_char_over: float = 1e-4
    max_rationale_chars: int = 2000
    m_max: int = 5

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma0", "gamma1"):
            _check_unit(name, getattr(self, name))
        if self.ramp_steps < 0:
            raise ValueError("ramp_steps must be >= 0")
        th = tuple((float(t), float(b)) for t, b in self.shaping_thresholds)
        if any(a[0] > b[0] for a, b in zip(th, th[1:])):
            raise ValueError("shaping thresholds must be ascending")
        if any(b < 0 for _, b in th):
            raise ValueError("shaping bonuses must be non-negative")
        object.__setattr__(self, "shaping_thresholds", th)
        if self.length_penalty_per_char_over < 0 or self.max_rationale_chars < 0:
            raise ValueError("length penalty settings must be non-negative")


@dataclass(frozen=True)
class RewardBreakdown:
    tiou: float
    fmt_time: float
    fmt_ans: float
    correct: bool
    r_loc: float
    r_ans: float
    r_total: float
    gamma: float = 0.0
    penalty: float = 0.0

    def as_dict(self) -> dict:
        return {
            "tiou": self.tiou,
            "fmt_time": self.fmt_time,
            "fmt_ans": self.fmt_ans,
            "correct": self.correct,
            "r_loc": self.r_loc,
            "r_ans": self.r_ans,
            "r_total": self.r_total,
        }


def loc_reward(pred: SpanSet, gold: SpanSet, fmt_time: float, alpha: float) -> float:
    _check_unit("fmt_time", fmt_time)
    return _mix(multi_span_tiou(pred, gold), fmt_time, alpha)


def _loc_from_tiou(tiou: float, fmt_time: float, alpha: float) -> float:
    return _mix(tiou, fmt_time, alpha)


def ans_reward(answer: str | None, gold_answer: str, fmt_ans: float, beta: float) -> float:
    correct = 1.0 if answer is not None and answer == gold_answer else 0.0
    return _mix(correct, fmt_ans, beta)


def composite_reward(r_loc: float, r_ans: float, gamma: float) -> float:
    for name, v in (("r_loc", r_loc), ("r_ans", r_ans), ("gamma", gamma)):
        _check_unit(name, v)
    return _mix(r_loc, r_ans, gamma)


def gamma_schedule(step: int, config: RewardConfig) -> float:
    """Linear ramp from ``gamma0`` at step 0 to ``gamma1`` at ``ramp_steps``."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if config.ramp_steps == 0 or step >= config.ramp_steps:
        return config.gamma1
    return _mix(config.gamma0, config.gamma1, step / config.ramp_steps)


def shaped_tvg_reward(tiou: float, thresholds: Sequence[tuple[float, float]]) -> float:
    """tIoU plus a bonus for every threshold it reaches, clamped to [0, 1]."""
    if tiou <= 0.0:
        return 0.0
    bonus = sum(b for t, b in thresholds if t <= tiou)
    return min(1.0, max(0.0, tiou + bonus))


def length_penalty(rationale: str, config: RewardConfig) -> float:
    over = max(0, len(rationale) - config.max_rationale_chars)
    return config.length_penalty_per_char_over * over


def predicted_spans(
    response: InterleavedResponse, duration_s: float, k_spans: int | None = None
) -> SpanSet:
    """Valid numeric candidates, first ``k_spans`` in emission order, normalized."""
    pairs = [
        (c.start_s, c.end_s)
        for c in response.span_candidates
        if c.ordered and c.in_range(duration_s)
    ]
    if k_spans is not None:
        pairs = pairs[:k_spans]
    return normalize_spans(pairs, duration_s)[0]


def score_response(
    response: InterleavedResponse | str,
    gold_spans: SpanSet,
    gold_answer: str,
    duration_s: float,
    config: RewardConfig = RewardConfig(),
    step: int | None = None,
    gamma: float | None = None,
) -> RewardBreakdown:
    """Full reward for one interleaved response.

    ``gamma`` overrides the curriculum; otherwise ``gamma_schedule(step)``
    is used, and with neither given the final ``gamma1`` applies.
    """
    if isinstance(response, str):
        response = parse_response(response)
    if gamma is None:
        gamma = gamma_schedule(step, config) if step is not None else config.gamma1
    pred = predicted_spans(response, duration_s)
    tiou = multi_span_tiou(pred, gold_spans)
    loc_signal = shaped_tvg_reward(tiou, config.shaping_thresholds) if config.shaping_thresholds else tiou
    fmt_t = fmt_time_score(response, duration_s, config.m_max)
    fmt_a = fmt_ans_score(response)
    correct = response.answer is not None and response.answer == gold_answer
    r_loc = _loc_from_tiou(loc_signal, fmt_t, config.alpha)
    r_ans = ans_reward(response.answer, gold_answer, fmt_a, config.beta)
    r = composite_reward(r_loc, r_ans, gamma)
    penalty = length_penalty(response.rationale_text, config)
    r_total = max(0.0, r - penalty)
    return RewardBreakdown(tiou, fmt_t, fmt_a, correct, r_loc, r_ans, r_total, gamma, penalty)
