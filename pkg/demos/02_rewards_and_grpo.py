"""
Verifiable rewards and group-relative advantages
================================================

Score a handful of sampled responses for one question, then turn the
scores into advantages and a loss value.
"""

import numpy as np

from spanqa.grpo import Rollout, RolloutGroup, batch_normalize, group_advantages, grpo_objective
from spanqa.rewards import RewardConfig, gamma_schedule, score_response
from spanqa.spans import SpanSet

gold = SpanSet.from_pairs([(12.0, 18.5), (40.0, 44.0)])
duration = 60.0
cfg = RewardConfig(alpha=0.1, beta=0.1, ramp_steps=1000)

# the answer weight grows over training
steps = np.linspace(0, 1500, 7).astype(int)
print("gamma curriculum:", [round(gamma_schedule(int(s), cfg), 3) for s in steps])

samples = [
    "<span>[12.00,18.50]</span> <span>[40.00,44.00]</span> both pours are visible <answer>C</answer>",
    "<span>[10.00,20.00]</span> the pour happens once <answer>C</answer>",
    "<span>[30.00,35.00]</span> <answer>B</answer>",
    "I am not sure, maybe C",
    "<span>[18.50,12.00]</span> <answer>C</answer> <answer>D</answer>",
]
step = 250
breakdowns = [score_response(s, gold, "C", duration, cfg, step=step) for s in samples]
print(f"\nstep {step}, gamma = {breakdowns[0].gamma:.2f}")
print(f"{'tIoU':>6} {'fmt_t':>6} {'fmt_a':>6} {'R':>6}")
for b in breakdowns:
    print(f"{b.tiou:6.3f} {b.fmt_time:6.2f} {b.fmt_ans:6.0f} {b.r_total:6.3f}")

rewards = [b.r_total for b in breakdowns]
adv = group_advantages(rewards)
print("\nadvantages:", np.round(adv, 3), "sum", f"{sum(adv):.1e}")
print("batch-normalized rewards:", np.round(batch_normalize(rewards), 3))

# log-probs would come from the policy and the frozen reference
rng = np.random.default_rng(0)
policy = rng.uniform(-80, -20, len(samples))
ref = policy - rng.uniform(0, 0.5, len(samples))
rollouts = tuple(Rollout("q0", s, b, float(p), float(r), 40) for s, b, p, r in zip(samples, breakdowns, policy, ref))
group = RolloutGroup(rollouts, tuple(adv))
for kl in (0.0, 0.05):
    print(f"loss with kl_coef={kl}: {grpo_objective([group], kl):.4f}")
