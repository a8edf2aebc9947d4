"""
Span algebra and grounding metrics
==================================

Spans are closed intervals in absolute seconds. A prediction and a gold
answer are both sets of spans, compared by total intersection over total
union.
"""

import numpy as np

from spanqa.spans import Span, SpanSet, interval_relation, mean_iou, multi_span_tiou, normalize_spans, recall_at_iou

# raw model output is messy: a reversed pair, an overlap, one out of range
raw = [(5, 3), (1, 2), (1.8, 4), (95, 130)]
clean, stats = normalize_spans(raw, duration_s=100)
print("normalized:", clean.to_pairs(), "| dropped", stats.dropped, "merged", stats.merged)

# two occurrences on each side, half overlapping
pred = SpanSet.from_pairs([(0, 2), (8, 10)])
gold = SpanSet.from_pairs([(1, 3), (7, 9)])
print("multi-span tIoU:", round(multi_span_tiou(pred, gold), 4))

# the same number by brute force on a 1 ms grid
t = np.arange(0, 12, 1e-3) + 5e-4
inside = lambda ss: np.any([(t >= s.start_s) & (t <= s.end_s) for s in ss], axis=0)
a, b = inside(pred), inside(gold)
print("grid estimate:  ", round((a & b).sum() / (a | b).sum(), 4))

# relations between events become graph edges
for x, y in [((0, 5), (10, 12)), ((0, 5), (3, 8)), ((1, 2), (0, 5)), ((0, 5), (1, 2))]:
    print(f"{x} vs {y}: {interval_relation(Span(*x), Span(*y)).name}")

# benchmark-style aggregation over per-item IoUs
ious = [0.8, 0.6, 0.4]
for tau in (0.3, 0.5, 0.7):
    print(f"R@{tau}: {recall_at_iou(ious, tau):.2f}")
print(f"mIoU: {mean_iou(ious):.2f}")
