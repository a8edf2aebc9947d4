"""
From chunk captions to a reviewed QA dataset
============================================

A synthetic video is captioned every three seconds and similar neighbours
merge into events. Each event becomes a multiple-choice record that must
survive review before it joins the final set.
"""

from collections import Counter

from spanqa.dataset import build_dataset, dataset_stats, split_by_video
from spanqa.events import cluster_entities
from spanqa.synth import synthetic_corpus

videos, graphs = synthetic_corpus(30, seed=5)

v, g = videos[0], graphs[0]
print(f"{v.video_id}: {v.source.duration_s:.0f}s, {len(v.chunk_descriptions)} chunks -> {len(g.nodes)} events")
for node in g.nodes:
    print(f"  {node.event_id} {node.spans.to_pairs()} {node.description}")

print("\nfirst few edges:")
for e in g.edges[:4]:
    print(f"  {e.from_event} {e.relation.name} {e.to_event}")

clusters = cluster_entities(g.nodes)
print("\nentity clusters:", [sorted({m for _, m in c.members}) for c in clusters][:5])

result = build_dataset(graphs, seed=5)
failed = Counter(r.failed_gate for r in result.reports if not r.accepted)
print(f"\n{len(result.records)} records kept; rejected by gate: {dict(failed)}")

rec = next(r for r in result.records if len(r.time_spans) > 1)
print("\na multi-span record:")
print("  spans:   ", rec.time_spans.to_pairs())
print("  query:   ", rec.grounding_query)
print("  question:", rec.question)
for k, text in rec.options.items():
    print(f"  {k}{'*' if k == rec.correct_answer else ' '} {text}")

stats = dataset_stats(result.records)
print("\nspan length mean/median:", round(stats.span_length_mean, 2), stats.span_length_median)
print("percentiles:", stats.span_length_percentiles)
print("multi-span share:", round(stats.multi_span_proportion, 3))
print("labels:", stats.label_histogram)

split = split_by_video(result.records, (0.8, 0.1, 0.1), seed=5)
print("videos per split:", {k: len(v) for k, v in split.splits.items()})
