"""Group-relative advantages and the GRPO loss value.

Nothing here updates parameters; the policy lives behind the backend and
only its log-probabilities come in.
"""
from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .rewards import RewardBreakdown

__all__ = [
    "Rollout",
    "RolloutGroup",
    "group_advantages",
    "batch_normalize",
    "sequence_kl",
    "rollout_kl",
    "grpo_objective",
    "compute_groups",
    "read_rollouts",
    "write_rollouts",
]


@dataclass(frozen=True)
class Rollout:
    prompt_id: str
    response_text: str
    reward: RewardBreakdown | float
    policy_logprob_sum: float | None = None
    ref_logprob_sum: float | None = None
    token_count: int = 1

    def __post_init__(self):
        if self.policy_logprob_sum is not None and self.token_count < 1:
            raise ValueError("token_count must be >= 1 when log-probs are present")

    @property
    def r_total(self) -> float:
        r = self.reward
        return r.r_total if isinstance(r, RewardBreakdown) else float(r)


@dataclass(frozen=True)
class RolloutGroup:
    rollouts: tuple[Rollout, ...]
    advantages: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.rollouts:
            raise ValueError("a rollout group needs at least one rollout")
        object.__setattr__(self, "rollouts", tuple(self.rollouts))
        object.__setattr__(self, "advantages", tuple(self.advantages))

    @property
    def prompt_id(self) -> str:
        return self.rollouts[0].prompt_id

    @property
    def rewards(self) -> list[float]:
        return [r.r_total for r in self.rollouts]

    def with_advantages(self, rewards: Sequence[float] | None = None) -> "RolloutGroup":
        return replace(self, advantages=tuple(group_advantages(rewards or self.rewards)))


def group_advantages(rewards: Sequence[float]) -> list[float]:
    """``A_i = R_i - mean(R)``."""
    if len(rewards) == 0:
        raise ValueError("empty reward group")
    if all(r == rewards[0] for r in rewards):
        return [0.0] * len(rewards)
    mean = math.fsum(rewards) / len(rewards)
    return [r - mean for r in rewards]


def batch_normalize(rewards: Sequence[float], eps: float = 1e-8) -> list[float]:
    """``(R_i - mean) / (std + eps)`` with the population standard deviation."""
    if len(rewards) == 0:
        raise ValueError("empty reward batch")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if all(r == rewards[0] for r in rewards):
        return [0.0] * len(rewards)
    n = len(rewards)
    mean = math.fsum(rewards) / n
    std = math.sqrt(math.fsum((r - mean) ** 2 for r in rewards) / n)
    if std == 0.0:
        return [0.0] * n
    return [(r - mean) / (std + eps) for r in rewards]


def sequence_kl(policy_token_logprobs: Sequence[float], ref_token_logprobs: Sequence[float]) -> float:
    """Mean per-token log-ratio, a first-order estimate of KL(policy || ref)."""
    if len(policy_token_logprobs) != len(ref_token_logprobs):
        raise ValueError("policy and reference sequences differ in length")
    if len(policy_token_logprobs) == 0:
        raise ValueError("empty token sequence")
    diffs = [p - q for p, q in zip(policy_token_logprobs, ref_token_logprobs)]
    return math.fsum(diffs) / len(diffs)


def rollout_kl(rollout: Rollout) -> float | None:
    """Same estimator from summed log-probs; None without a reference."""
    if rollout.policy_logprob_sum is None or rollout.ref_logprob_sum is None:
        return None
    return (rollout.policy_logprob_sum - rollout.ref_logprob_sum) / rollout.token_count


def grpo_objective(groups: Sequence[RolloutGroup], kl_coef: float = 0.0) -> float:
    """Loss value ``-mean_groups sum_i A_i log pi(S_i) + kl_coef * mean KL``.

    Sums are exactly rounded (``math.fsum``), so the value does not depend
    on group or rollout order.
    """
    if not groups:
        raise ValueError("no rollout groups")
    terms = []
    kls = []
    for g in groups:
        if len(g.advantages) != len(g.rollouts):
            raise ValueError(f"group {g.prompt_id!r}: advantages not computed")
        for a, r in zip(g.advantages, g.rollouts):
            if r.policy_logprob_sum is None:
                raise ValueError(f"group {g.prompt_id!r}: missing policy log-prob")
            terms.append(a * r.policy_logprob_sum)
            kl = rollout_kl(r)
            if kl is not None:
                kls.append(kl)
    loss = -math.fsum(terms) / len(groups)
    if kl_coef and kls:
        loss += kl_coef * (math.fsum(kls) / len(kls))
    return loss


def compute_groups(
    rollouts: Iterable[Rollout],
    normalize: bool = False,
    eps: float = 1e-8,
) -> list[RolloutGroup]:
    """Group rollouts by prompt and attach advantages.

    With ``normalize`` the whole batch of rewards is standardized first and
    the group-relative advantages are taken on the normalized values.
    """
    rollouts = list(rollouts)
    rewards = [r.r_total for r in rollouts]
    if normalize and rollouts:
        rewards = batch_normalize(rewards, eps)
    by_prompt: OrderedDict[str, list[int]] = OrderedDict()
    for i, r in enumerate(rollouts):
        by_prompt.setdefault(r.prompt_id, []).append(i)
    groups = []
    for idx in by_prompt.values():
        g = RolloutGroup(tuple(rollouts[i] for i in idx))
        groups.append(g.with_advantages([rewards[i] for i in idx]))
    return groups


_REWARD_FIELDS = ("tiou", "fmt_time", "fmt_ans", "correct", "r_loc", "r_ans", "r_total")


def _rollout_from_dict(d: dict) -> Rollout:
    if all(k in d for k in _REWARD_FIELDS):
        reward = RewardBreakdown(**{k: d[k] for k in _REWARD_FIELDS})
    elif "r_total" in d:
        reward = float(d["r_total"])
    else:
        raise ValueError(f"rollout {d.get('prompt_id')!r} has no reward fields")
    return Rollout(
        prompt_id=str(d["prompt_id"]),
        response_text=d.get("response_text", ""),
        reward=reward,
        policy_logprob_sum=d.get("policy_logprob_sum"),
        ref_logprob_sum=d.get("ref_logprob_sum"),
        token_count=int(d.get("token_count", 1)),
    )


def read_rollouts(path: str | Path) -> list[Rollout]:
    out = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(_rollout_from_dict(json.loads(line)))
            except (KeyError, TypeError, json.JSONDecodeError) as e:
                raise ValueError(f"{path}:{lineno}: bad rollout record ({e})") from e
    return out


def rollout_record(rollout: Rollout, advantage: float | None = None) -> dict:
    d = {"prompt_id": rollout.prompt_id, "response_text": rollout.response_text}
    if isinstance(rollout.reward, RewardBreakdown):
        d.update(rollout.reward.as_dict())
    else:
        d["r_total"] = rollout.reward
    d["policy_logprob_sum"] = rollout.policy_logprob_sum
    d["ref_logprob_sum"] = rollout.ref_logprob_sum
    d["token_count"] = rollout.token_count
    if advantage is not None:
        d["advantage"] = advantage
    return d


def write_rollouts(groups: Sequence[RolloutGroup], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for g in groups:
            advs = g.advantages or (None,) * len(g.rollouts)
            for r, a in zip(g.rollouts, advs):
                fh.write(json.dumps(rollout_record(r, a)) + "\n")
