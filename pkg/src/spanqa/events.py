"""Event graphs from per-chunk descriptions.

A video is cut into short uniform chunks, each chunk gets a description,
and adjacent chunks whose descriptions are similar are merged into one
event. Edges carry the interval relation between events; entities
mentioned across events are clustered.
"""
from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .providers import (
    ConcatSummarizer,
    Embedder,
    EntityExtractor,
    NoEntities,
    Similarity,
    Summarizer,
    TokenF1Similarity,
    cosine,
    token_f1,
)
from .spans import IntervalRelation, Span, SpanSet, interval_relation, normalize_spans

__all__ = [
    "Chunk",
    "EventNode",
    "EventEdge",
    "EntityCluster",
    "EventGraph",
    "parse_clock",
    "chunk_timeline",
    "describe_chunks",
    "merge_chunks",
    "derive_edges",
    "cluster_entities",
    "build_graph",
    "write_graphs",
    "read_graphs",
]


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    span: Span
    description: str = ""


@dataclass(frozen=True)
class EventNode:
    event_id: str
    spans: SpanSet
    description: str
    entities: tuple[str, ...] = ()
    video_id: str = ""

    def __post_init__(self):
        if not self.spans:
            raise ValueError(f"event {self.event_id!r} has no spans")
        object.__setattr__(self, "entities", tuple(self.entities))


@dataclass(frozen=True)
class EventEdge:
    from_event: str
    to_event: str
    relation: IntervalRelation


@dataclass(frozen=True)
class EntityCluster:
    cluster_id: str
    members: tuple[tuple[str, str], ...]

    @property
    def representative(self) -> str:
        return self.members[0][1]


@dataclass
class EventGraph:
    video_id: str
    duration_s: float
    nodes: list[EventNode]
    edges: list[EventEdge] = field(default_factory=list)
    clusters: list[EntityCluster] = field(default_factory=list)


_CLOCK = re.compile(r"^(?:(\d+):)?(\d+):(\d+(?:\.\d+)?)$")


def parse_clock(text: str) -> float:
    """``mm:ss`` or ``hh:mm:ss`` to seconds.

    >>> parse_clock("30:58"), parse_clock("1:02:03.5")
    (1858.0, 3723.5)
    """
    m = _CLOCK.match(text.strip())
    if not m:
        raise ValueError(f"not a clock time: {text!r}")
    h, mm, ss = m.groups()
    return (int(h) if h else 0) * 3600 + int(mm) * 60 + float(ss)


def chunk_timeline(duration_s: float, chunk_len_s: float = 3.0) -> list[Chunk]:
    if not duration_s > 0 or not chunk_len_s > 0:
        raise ValueError("duration and chunk length must be positive")
    chunks = []
    i = 0
    while i * chunk_len_s < duration_s:
        start = i * chunk_len_s
        end = min((i + 1) * chunk_len_s, duration_s)
        chunks.append(Chunk(f"c{i:04d}", Span(start, end)))
        i += 1
    return chunks


def describe_chunks(
    chunks: Sequence[Chunk],
    describe: Callable[[Chunk], str],
    jobs: int = 1,
) -> list[Chunk]:
    """Fill chunk descriptions, with at most ``jobs`` calls in flight.

    Output order follows ``chunks`` regardless of completion order.
    """
    if jobs <= 1:
        texts = [describe(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            texts = list(pool.map(describe, chunks))
    return [replace(c, description=t) for c, t in zip(chunks, texts)]


def merge_chunks(
    chunks: Sequence[Chunk],
    similarity: Similarity | None = None,
    threshold: float = 0.85,
    summarizer: Summarizer | None = None,
    entity_extractor: EntityExtractor | None = None,
    compare_to: str = "last",
    video_id: str = "",
) -> list[EventNode]:
    """Left-to-right scan merging similar adjacent chunks into events.

    An incoming chunk joins the open segment when its similarity to the
    segment's last chunk (``compare_to="last"``) or to the concatenated
    segment text (``compare_to="segment"``) is at least ``threshold``.
    """
    if not chunks:
        raise ValueError("no chunks to merge")
    if compare_to not in ("last", "segment"):
        raise ValueError(f"compare_to must be 'last' or 'segment', got {compare_to!r}")
    for c in chunks:
        if not c.description.strip():
            raise ValueError(f"chunk {c.chunk_id} has no description")
    similarity = similarity or TokenF1Similarity()
    summarizer = summarizer or ConcatSummarizer()
    entity_extractor = entity_extractor or NoEntities()

    segments: list[list[Chunk]] = [[chunks[0]]]
    for c in chunks[1:]:
        open_seg = segments[-1]
        if compare_to == "last":
            ref = open_seg[-1].description
        else:
            ref = " ".join(x.description for x in open_seg)
        if similarity.similarity(ref, c.description) >= threshold:
            open_seg.append(c)
        else:
            segments.append([c])

    nodes = []
    for i, seg in enumerate(segments):
        spans, _ = normalize_spans([c.span.as_pair() for c in seg], None)
        desc = summarizer.summarize([c.description for c in seg])
        ents = []
        for e in entity_extractor.entities(desc):
            if e not in ents:
                ents.append(e)
        nodes.append(EventNode(f"e{i:03d}", spans, desc, tuple(ents), video_id))
    return nodes


def derive_edges(nodes: Sequence[EventNode]) -> list[EventEdge]:
    """One labeled edge per ordered pair of distinct nodes (first spans)."""
    edges = []
    for a in nodes:
        for b in nodes:
            if a is b or a.event_id == b.event_id:
                continue
            edges.append(EventEdge(a.event_id, b.event_id, interval_relation(a.spans[0], b.spans[0])))
    return edges


def cluster_entities(
    nodes: Sequence[EventNode],
    embed: Embedder | None = None,
    link_threshold: float = 0.75,
) -> list[EntityCluster]:
    """Greedy agglomeration of entity mentions.

    Each mention joins the first cluster whose representative (its first
    member) is at least ``link_threshold`` similar, else starts a new one.
    Similarity is cosine over ``embed`` vectors, or token F1 without one.
    """
    cache: dict[str, Sequence[float]] = {}

    def sim(a: str, b: str) -> float:
        if embed is None:
            return token_f1(a, b)
        for t in (a, b):
            if t not in cache:
                cache[t] = embed.embed(t)
        return cosine(cache[a], cache[b])

    clusters: list[list[tuple[str, str]]] = []
    for node in nodes:
        for ent in node.entities:
            for members in clusters:
                if sim(members[0][1], ent) >= link_threshold:
                    members.append((node.event_id, ent))
                    break
            else:
                clusters.append([(node.event_id, ent)])
    return [EntityCluster(f"k{i:03d}", tuple(m)) for i, m in enumerate(clusters)]


def build_graph(
    video_id: str,
    duration_s: float,
    descriptions: Sequence[str] | Callable[[Chunk], str],
    chunk_len_s: float = 3.0,
    similarity: Similarity | None = None,
    threshold: float = 0.85,
    summarizer: Summarizer | None = None,
    entity_extractor: EntityExtractor | None = None,
    embed: Embedder | None = None,
    link_threshold: float = 0.75,
    jobs: int = 1,
) -> EventGraph:
    """Build the full event graph of one video.

    ``descriptions`` is either one string per chunk or a describer callable.
    """
    chunks = chunk_timeline(duration_s, chunk_len_s)
    if callable(descriptions):
        chunks = describe_chunks(chunks, descriptions, jobs)
    else:
        if len(descriptions) != len(chunks):
            raise ValueError(f"expected {len(chunks)} chunk descriptions, got {len(descriptions)}")
        chunks = [replace(c, description=d) for c, d in zip(chunks, descriptions)]
    nodes = merge_chunks(chunks, similarity, threshold, summarizer, entity_extractor, video_id=video_id)
    return EventGraph(
        video_id,
        duration_s,
        nodes,
        derive_edges(nodes),
        cluster_entities(nodes, embed, link_threshold),
    )


def _graph_records(g: EventGraph) -> Iterable[dict]:
    for n in g.nodes:
        yield {
            "type": "node",
            "video_id": g.video_id,
            "duration_s": g.duration_s,
            "event_id": n.event_id,
            "spans": [list(p) for p in n.spans.to_pairs()],
            "description": n.description,
            "entities": list(n.entities),
        }
    for e in g.edges:
        yield {
            "type": "edge",
            "video_id": g.video_id,
            "from_event": e.from_event,
            "to_event": e.to_event,
            "relation": e.relation.name,
        }
    for c in g.clusters:
        yield {
            "type": "cluster",
            "video_id": g.video_id,
            "cluster_id": c.cluster_id,
            "members": [list(m) for m in c.members],
        }


def write_graphs(graphs: Iterable[EventGraph], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for g in graphs:
            for rec in _graph_records(g):
                fh.write(json.dumps(rec) + "\n")


def read_graphs(path: str | Path) -> list[EventGraph]:
    graphs: dict[str, EventGraph] = {}
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            vid = rec["video_id"]
            kind = rec.get("type")
            if kind == "node":
                g = graphs.setdefault(vid, EventGraph(vid, float(rec["duration_s"]), []))
                spans, _ = normalize_spans(rec["spans"], g.duration_s)
                g.nodes.append(
                    EventNode(rec["event_id"], spans, rec["description"], tuple(rec.get("entities", ())), vid)
                )
            elif kind == "edge":
                graphs[vid].edges.append(
                    EventEdge(rec["from_event"], rec["to_event"], IntervalRelation.from_name(rec["relation"]))
                )
            elif kind == "cluster":
                members = tuple((m[0], m[1]) for m in rec["members"])
                graphs[vid].clusters.append(EntityCluster(rec["cluster_id"], members))
            else:
                raise ValueError(f"{path}:{lineno}: unknown record type {kind!r}")
    return list(graphs.values())
