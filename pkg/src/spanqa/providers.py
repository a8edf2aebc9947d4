"""Text providers used while building event graphs and QA items.

Each capability is a small protocol. The offline fallbacks here are
deterministic so the whole data pipeline runs hermetically; production
deployments point :class:`PipeProvider` at an external service speaking
one JSON document per line.
"""
from __future__ import annotations

import json
import math
import re
import subprocess
import threading
import zlib
from collections import Counter
from typing import IO, Protocol, Sequence, runtime_checkable

__all__ = [
    "Describer",
    "Similarity",
    "Embedder",
    "Summarizer",
    "EntityExtractor",
    "tokens",
    "token_f1",
    "token_jaccard",
    "cosine",
    "TokenF1Similarity",
    "ConcatSummarizer",
    "HashingEmbedder",
    "NoEntities",
    "ProviderError",
    "PipeProvider",
    "serve_providers",
]

_WORD = re.compile(r"\d+(?:\.\d+)?[a-z]*|[a-z]+(?:'[a-z]+)?")


@runtime_checkable
class Describer(Protocol):
    def describe(self, frames_manifest: str) -> str: ...


@runtime_checkable
class Similarity(Protocol):
    def similarity(self, a: str, b: str) -> float: ...


@runtime_checkable
class Embedder(Protocol):
    def embed(self, text: str) -> Sequence[float]: ...


@runtime_checkable
class Summarizer(Protocol):
    def summarize(self, texts: Sequence[str]) -> str: ...


@runtime_checkable
class EntityExtractor(Protocol):
    def entities(self, text: str) -> list[str]: ...


def tokens(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def token_f1(a: str, b: str) -> float:
    """F1 overlap of lowercase word multisets.

    >>> round(token_f1("red car", "a red car"), 3)
    0.8
    """
    ta, tb = Counter(tokens(a)), Counter(tokens(b))
    if not ta and not tb:
        return 1.0
    common = sum((ta & tb).values())
    if common == 0:
        return 0.0
    precision = common / sum(ta.values())
    recall = common / sum(tb.values())
    return 2 * precision * recall / (precision + recall)


def token_jaccard(a: str, b: str) -> float:
    sa, sb = set(tokens(a)), set(tokens(b))
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    nu = math.sqrt(math.fsum(x * x for x in u))
    nv = math.sqrt(math.fsum(x * x for x in v))
    if nu == 0 or nv == 0:
        return 0.0
    return math.fsum(x * y for x, y in zip(u, v)) / (nu * nv)


class TokenF1Similarity:
    def similarity(self, a: str, b: str) -> float:
        return token_f1(a, b)


class ConcatSummarizer:
    """Joins distinct descriptions in order."""

    def summarize(self, texts: Sequence[str]) -> str:
        seen = []
        for t in texts:
            t = t.strip()
            if t and t not in seen:
                seen.append(t)
        return " ".join(seen)


class HashingEmbedder:
    """Bag-of-words hashed into a fixed number of buckets (crc32, stable)."""

    def __init__(self, dim: int = 256):
        self.dim = dim

    def embed(self, text: str) -> list[float]:
        vec = [0.0] * self.dim
        for tok in tokens(text):
            vec[zlib.crc32(tok.encode()) % self.dim] += 1.0
        return vec


class NoEntities:
    def entities(self, text: str) -> list[str]:
        return []


class ProviderError(RuntimeError):
    """Transport-level failure talking to an external provider."""


class PipeProvider:
    """Client for a provider process speaking JSON lines on stdin/stdout.

    Request: ``{"op": "similarity", "args": {...}}``.
    Response: ``{"result": ...}`` or ``{"error": "..."}``.
    """

    def __init__(self, command: Sequence[str]):
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lock = threading.Lock()

    def _call(self, op: str, **args):
        line = json.dumps({"op": op, "args": args})
        with self._lock:
            try:
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
                reply = self._proc.stdout.readline()
            except (BrokenPipeError, OSError) as e:
                raise ProviderError(f"provider pipe failed: {e}") from e
        if not reply:
            raise ProviderError("provider closed the pipe")
        msg = json.loads(reply)
        if "error" in msg:
            raise ProviderError(msg["error"])
        return msg["result"]

    def describe(self, frames_manifest: str) -> str:
        return self._call("describe", frames_manifest=frames_manifest)

    def similarity(self, a: str, b: str) -> float:
        return float(self._call("similarity", a=a, b=b))

    def embed(self, text: str) -> list[float]:
        return list(self._call("embed", text=text))

    def summarize(self, texts: Sequence[str]) -> str:
        return self._call("summarize", texts=list(texts))

    def entities(self, text: str) -> list[str]:
        return list(self._call("entities", text=text))

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_providers(impl, stdin: IO[str], stdout: IO[str]) -> None:
    """Serve ``impl``'s provider methods over JSON lines until EOF."""
    ops = {"describe", "similarity", "embed", "summarize", "entities"}
    for line in stdin:
        if not line.strip():
            continue
        try:
            msg = json.loads(line)
            op = msg["op"]
            if op not in ops or not hasattr(impl, op):
                raise ValueError(f"unsupported op {op!r}")
            reply = {"result": getattr(impl, op)(**msg.get("args", {}))}
        except Exception as e:  # noqa: BLE001 - errors go back over the wire
            reply = {"error": f"{type(e).__name__}: {e}"}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
