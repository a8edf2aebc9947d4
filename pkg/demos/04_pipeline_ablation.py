"""
Skim then zoom, and the four ablation presets
=============================================

Run the two-stage loop against in-process mock backends. The gold-echo
backend shows the plumbing is lossless; the random backend gives a floor.
"""

from spanqa.backends import GoldEchoBackend, MalformedBackend, RandomBackend, RecordingBackend
from spanqa.dataset import build_dataset
from spanqa.pipeline import PipelineConfig, ablation_table, format_ablation, run_batch, run_pipeline
from spanqa.synth import synthetic_corpus

videos, graphs = synthetic_corpus(20, seed=9)
records = build_dataset(graphs, seed=9).records
sources = {v.video_id: v.source for v in videos}
items = [(sources[r.video_id], r) for r in records]

# one record, traced through both stages
video, rec = items[0]
trace = RecordingBackend(GoldEchoBackend.from_records(records))
res = run_pipeline(video, rec, trace)
ground, answer = trace.requests
print("stage 1 prompt (head):", ground.prompt_text[:110], "...")
print("stage 1 output:", res.stage1_raw)
print("stage 2 frames:", len(answer.frame_timestamps), "from", answer.frame_timestamps[0], "to", answer.frame_timestamps[-1])
print("stage 2 output:", res.stage2_raw)
print("frames used:", res.frames_used, "| reward:", res.reward.r_total)

for name, backend in [("gold echo", GoldEchoBackend.from_records(records)), ("random", RandomBackend(seed=1)), ("malformed", MalformedBackend())]:
    results = run_batch(items, backend, PipelineConfig(preset="D"), jobs=4)
    acc = 100 * sum(r.reward.correct for r in results) / len(results)
    tiou = sum(r.reward.tiou for r in results) / len(results)
    fallback = sum(r.fallback for r in results)
    print(f"\n{name:>9}: accuracy {acc:5.1f}  mean tIoU {tiou:.3f}  fallbacks {fallback}/{len(results)}")

print()
print(format_ablation(ablation_table(items, RandomBackend(seed=1), PipelineConfig())))
