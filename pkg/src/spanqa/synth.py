"""Synthetic videos for hermetic runs.

A synthetic video is a frame manifest plus a scripted sequence of
activities. Chunk descriptions are noisy paraphrases of the active
activity, so semantic merging recovers the script's event boundaries.
"""
from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .events import EventGraph, build_graph
from .frames import FrameSource, write_manifest
from .providers import tokens

__all__ = ["SUBJECTS", "ACTIONS", "PLACES", "SyntheticVideo", "ScriptSummarizer", "VocabEntities", "synthetic_video", "synthetic_corpus"]

SUBJECTS = (
    "a woman", "a man", "a child", "an old man", "a cook", "a dog",
    "a cyclist", "a teenager", "a mechanic", "a musician",
)
ACTIONS = (
    "slices bread", "pours coffee", "opens a window", "reads a newspaper",
    "waters the plants", "repairs a bicycle", "plays the guitar", "folds laundry",
    "washes dishes", "paints a fence", "throws a ball", "sweeps the floor",
    "carries a box", "ties shoelaces", "writes a letter", "feeds a cat",
)
PLACES = (
    "in the kitchen", "in the garden", "on the porch", "in the garage",
    "in the living room", "on the street", "in the park", "by the lake",
)
_FILLERS = ("slowly", "carefully", "again", "briefly", "quietly", "calmly")


@dataclass
class SyntheticVideo:
    video_id: str
    source: FrameSource
    chunk_descriptions: list[str]
    script: list[tuple[float, float, str]]


class ScriptSummarizer:
    """Most common chunk description with filler adverbs stripped."""

    def summarize(self, texts):
        cores = []
        for t in texts:
            words = t.split()
            while words and words[-1] in _FILLERS:
                words.pop()
            cores.append(" ".join(words))
        counts = Counter(cores)
        return min(counts, key=lambda c: (-counts[c], len(c), c))


class VocabEntities:
    """Picks out the subject and place phrases a description mentions."""

    def entities(self, text: str) -> list[str]:
        low = " ".join(tokens(text))
        return [p for p in SUBJECTS + PLACES if f" {' '.join(tokens(p))} " in f" {low} "]


def synthetic_video(
    video_id: str,
    seed: int,
    chunk_len_s: float = 3.0,
    min_chunks: int = 3,
    max_chunks: int = 10,
    n_events: tuple[int, int] = (5, 9),
    fps: float = 10.0,
    repeat_prob: float = 0.3,
) -> SyntheticVideo:
    """One scripted video; events are whole numbers of chunks long.

    With probability ``repeat_prob`` an earlier activity recurs later,
    giving a multi-span gold set.
    """
    rng = random.Random(f"{seed}:{video_id}")
    k = rng.randint(*n_events)
    activities = []
    while len(activities) < k:
        a = f"{rng.choice(SUBJECTS)} {rng.choice(ACTIONS)} {rng.choice(PLACES)}"
        if a not in activities:
            activities.append(a)
    sequence = list(activities)
    if k >= 4 and rng.random() < repeat_prob:
        src = rng.randrange(0, k - 2)
        sequence.insert(rng.randrange(src + 2, len(sequence) + 1), activities[src])

    script, descs, t = [], [], 0.0
    for act in sequence:
        n = rng.randint(min_chunks, max_chunks)
        script.append((t, t + n * chunk_len_s, act))
        for _ in range(n):
            d = act
            if rng.random() < 0.3:
                d = f"{act} {rng.choice(_FILLERS)}"
            descs.append(d[0].upper() + d[1:])
        t += n * chunk_len_s
    source = FrameSource.uniform(video_id, t, fps)
    return SyntheticVideo(video_id, source, descs, script)


def synthetic_corpus(
    n_videos: int,
    seed: int,
    manifest_dir: str | Path | None = None,
    **video_kwargs,
) -> tuple[list[SyntheticVideo], list[EventGraph]]:
    """``n_videos`` videos and their event graphs; optionally writes manifests."""
    videos, graphs = [], []
    for i in range(n_videos):
        v = synthetic_video(f"vid{i:04d}", seed, **video_kwargs)
        videos.append(v)
        graphs.append(
            build_graph(
                v.video_id,
                v.source.duration_s,
                v.chunk_descriptions,
                chunk_len_s=video_kwargs.get("chunk_len_s", 3.0),
                summarizer=ScriptSummarizer(),
                entity_extractor=VocabEntities(),
            )
        )
        if manifest_dir is not None:
            Path(manifest_dir).mkdir(parents=True, exist_ok=True)
            write_manifest(v.source, Path(manifest_dir) / f"{v.video_id}.tsv")
    return videos, graphs
