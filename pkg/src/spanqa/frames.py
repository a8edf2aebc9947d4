"""Budget-preserving frame selection.

Stage 1 skims the whole timeline with ``n_g`` midpoint-uniform frames;
stage 2 spends ``n_l`` frames inside the predicted spans. Continuous target
times are projected onto the native decode grid of a :class:`FrameSource`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grammar import FrameSample
from .spans import SpanSet

__all__ = [
    "FrameSource",
    "BudgetConfig",
    "FrameSelection",
    "midpoint_targets",
    "allocate_budget",
    "sample_global",
    "sample_spans",
    "read_manifest",
    "write_manifest",
]


@dataclass(frozen=True)
class FrameSource:
    """Immutable snapshot of a video's native frame timestamps."""

    video_id: str
    duration_s: float
    frame_timestamps: tuple[float, ...]

    def __post_init__(self):
        ts = tuple(float(t) for t in self.frame_timestamps)
        if not (math.isfinite(self.duration_s) and self.duration_s > 0):
            raise ValueError(f"duration must be positive, got {self.duration_s}")
        for a, b in zip(ts, ts[1:]):
            if not a < b:
                raise ValueError("frame timestamps must be strictly increasing")
        if ts and (ts[0] < 0 or ts[-1] > self.duration_s):
            raise ValueError("frame timestamps must lie within [0, duration]")
        object.__setattr__(self, "frame_timestamps", ts)
        object.__setattr__(self, "_grid", np.asarray(ts, dtype=float))

    @classmethod
    def uniform(cls, video_id: str, duration_s: float, fps: float) -> "FrameSource":
        """A constant-rate decode grid starting at t=0."""
        n = int(math.floor(duration_s * fps + 1e-9)) + 1
        ts = [i / fps for i in range(n) if i / fps <= duration_s]
        return cls(video_id, duration_s, tuple(ts))

    def __len__(self) -> int:
        return len(self.frame_timestamps)

    @property
    def grid(self) -> np.ndarray:
        return self._grid


@dataclass(frozen=True)
class BudgetConfig:
    n_g: int = 64
    n_l: int = 64
    m_max: int = 5
    k_spans: int = 5
    cap_factor: float = 1.5

    def __post_init__(self):
        if self.n_g <= 0:
            raise ValueError("n_g must be positive")
        if self.n_l < 0:
            raise ValueError("n_l must be non-negative")
        if self.m_max < 1 or self.k_spans < 1:
            raise ValueError("m_max and k_spans must be >= 1")
        if not self.cap_factor > 0:
            raise ValueError("cap_factor must be positive")

    @property
    def total(self) -> int:
        return self.n_g + self.n_l


@dataclass(frozen=True)
class FrameSelection:
    frames: tuple[FrameSample, ...]
    requested: int
    per_span: tuple[int, ...] = field(default=())

    @property
    def shortfall(self) -> int:
        return self.requested - len(self.frames)

    @property
    def timestamps(self) -> list[float]:
        return [f.timestamp_s for f in self.frames]


def midpoint_targets(start_s: float, end_s: float, n: int) -> np.ndarray:
    """``n`` evenly spaced cell midpoints over ``[start_s, end_s]``."""
    j = np.arange(1, n + 1, dtype=float)
    return start_s + (j - 0.5) * (end_s - start_s) / n


def _snap(grid: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Assign each target to a distinct native frame, preserving order.

    Each target takes the nearest frame that is later than the previous
    pick and still leaves room for the remaining targets. On a grid dense
    enough this is plain nearest-neighbour snapping. If there are fewer
    frames than targets, every frame is returned.
    """
    m, n = len(grid), len(targets)
    if n >= m:
        return np.arange(m)
    picks = np.empty(n, dtype=int)
    lo = 0
    for j, t in enumerate(targets):
        hi = m - (n - j)  # last index that leaves room for the rest
        k = int(np.searchsorted(grid, t, side="left"))
        k = min(max(k, lo), hi)
        if k > lo and abs(grid[k - 1] - t) <= abs(grid[k] - t):
            k -= 1
        picks[j] = k
        lo = k + 1
    return picks


def _frames(grid_idx: np.ndarray, offset: int, source: FrameSource) -> list[FrameSample]:
    ts = source.frame_timestamps
    return [FrameSample(offset + int(i), ts[offset + int(i)]) for i in grid_idx]


def sample_global(source: FrameSource, n_g: int) -> FrameSelection:
    if n_g < 1:
        raise ValueError("n_g must be >= 1")
    if len(source) == 0:
        raise ValueError(f"frame source {source.video_id!r} has no frames")
    targets = midpoint_targets(0.0, source.duration_s, n_g)
    picks = _snap(source.grid, targets)
    return FrameSelection(tuple(_frames(picks, 0, source)), n_g)


def _largest_remainder(budget: int, weights: Sequence[float]) -> list[int]:
    total = math.fsum(weights)
    quotas = [budget * w / total for w in weights]
    alloc = [int(math.floor(q)) for q in quotas]
    rest = budget - sum(alloc)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[:rest]:
        alloc[i] += 1
    return alloc


def allocate_budget(
    n_l: int,
    lengths: Sequence[float],
    capacity: Sequence[int],
    cap_factor: float = 1.5,
) -> list[int]:
    """Split ``n_l`` frames across spans proportionally to their lengths.

    Each span is capped at ``ceil(cap_factor * n_l * len_i / total_len)`` and
    at its number of available native frames; budget freed by capped spans
    goes to the uncapped ones. The sum may fall short of ``n_l`` only when
    every span is capped.
    """
    total = math.fsum(lengths)
    caps = [
        min(int(math.ceil(cap_factor * n_l * length / total - 1e-9)), int(c))
        for length, c in zip(lengths, capacity)
    ]
    alloc = [0] * len(lengths)
    open_idx = list(range(len(lengths)))
    remaining = n_l
    while remaining > 0 and open_idx:
        share = _largest_remainder(remaining, [lengths[i] for i in open_idx])
        over = [i for i, s in zip(open_idx, share) if alloc[i] + s >= caps[i]]
        if not over:
            for i, s in zip(open_idx, share):
                alloc[i] += s
            break
        for i in over:
            remaining -= caps[i] - alloc[i]
            alloc[i] = caps[i]
        open_idx = [i for i in open_idx if i not in over]
    return alloc


def sample_spans(
    source: FrameSource,
    spans: SpanSet,
    n_l: int,
    cap_factor: float = 1.5,
) -> FrameSelection:
    """Pick ``n_l`` frames from inside ``spans``, keeping absolute timestamps."""
    if not spans:
        raise ValueError("cannot sample from an empty span set")
    if n_l < 1:
        raise ValueError("n_l must be >= 1")
    grid = source.grid
    bounds = []
    for s in spans:
        lo = int(np.searchsorted(grid, s.start_s, side="left"))
        hi = int(np.searchsorted(grid, s.end_s, side="right"))
        bounds.append((lo, hi))
    alloc = allocate_budget(
        n_l, [s.length for s in spans], [hi - lo for lo, hi in bounds], cap_factor
    )
    frames: list[FrameSample] = []
    per_span = []
    for s, (lo, hi), n in zip(spans, bounds, alloc):
        if n == 0:
            per_span.append(0)
            continue
        picks = _snap(grid[lo:hi], midpoint_targets(s.start_s, s.end_s, n))
        frames.extend(_frames(picks, lo, source))
        per_span.append(len(picks))
    return FrameSelection(tuple(frames), n_l, tuple(per_span))


def read_manifest(
    path: str | Path,
    video_id: str | None = None,
    duration_s: float | None = None,
) -> FrameSource:
    """Load ``index<TAB>timestamp_s`` lines.

    Lines starting with ``#`` are comments; ``# duration_s=<x>`` and
    ``# video_id=<id>`` comments supply metadata when not given explicitly.
    Without any duration, the last timestamp is used.
    """
    path = Path(path)
    meta = {}
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected index<TAB>timestamp_s")
            rows.append((int(parts[0]), float(parts[1])))
    rows.sort()
    timestamps = tuple(t for _, t in rows)
    if duration_s is None:
        if "duration_s" in meta:
            duration_s = float(meta["duration_s"])
        elif timestamps:
            duration_s = timestamps[-1]
        else:
            raise ValueError(f"{path}: empty manifest and no duration")
    return FrameSource(video_id or meta.get("video_id") or path.stem, duration_s, timestamps)


def write_manifest(source: FrameSource, path: str | Path) -> None:
    lines = [f"# video_id={source.video_id}", f"# duration_s={source.duration_s!r}"]
    lines += [f"{i}\t{t!r}" for i, t in enumerate(source.frame_timestamps)]
    Path(path).write_text("\n".join(lines) + "\n")
