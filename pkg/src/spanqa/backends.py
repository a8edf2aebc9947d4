"""Model backends behind a single request/response contract.

A request is one JSON document (see :class:`BackendRequest`); a response
is ``{"raw_text": ...}``. Mocks run in-process; real models sit behind a
JSON-lines pipe or HTTP ``POST /generate``.
"""
from __future__ import annotations

import hashlib
import json
import os
import random
import subprocess
import threading
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field
from typing import IO, Callable, Mapping, Protocol, Sequence

from .grammar import OPTIONS, render_answer, render_response, render_span

__all__ = [
    "ENDPOINT_ENV",
    "BackendRequest",
    "Backend",
    "BackendError",
    "GoldEchoBackend",
    "RandomBackend",
    "MalformedBackend",
    "RecordingBackend",
    "HttpBackend",
    "PipeBackend",
    "call_with_retry",
    "serve_stdio",
    "make_backend",
]

ENDPOINT_ENV = "SPANQA_BACKEND_URL"


@dataclass(frozen=True)
class BackendRequest:
    item_id: str
    stage: str  # "ground" or "answer"
    prompt_text: str
    frame_timestamps: tuple[float, ...]
    duration_s: float
    question: str
    options: Mapping[str, str] = field(default_factory=dict)
    grounding_query: str | None = None
    spans: tuple[tuple[float, float], ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frame_timestamps"] = list(self.frame_timestamps)
        d["options"] = dict(self.options)
        d["spans"] = [list(s) for s in self.spans]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackendRequest":
        return cls(
            item_id=d["item_id"],
            stage=d["stage"],
            prompt_text=d["prompt_text"],
            frame_timestamps=tuple(d.get("frame_timestamps", ())),
            duration_s=float(d["duration_s"]),
            question=d.get("question", ""),
            options=dict(d.get("options", {})),
            grounding_query=d.get("grounding_query"),
            spans=tuple(tuple(s) for s in d.get("spans", ())),
        )


class Backend(Protocol):
    def generate(self, request: BackendRequest) -> str: ...


class BackendError(RuntimeError):
    """Transport failure; the call may be retried."""


class GoldEchoBackend:
    """Answers every request with the gold spans / option of its item."""

    def __init__(self, gold: Mapping[str, tuple[Sequence[tuple[float, float]], str]]):
        self.gold = dict(gold)

    @classmethod
    def from_records(cls, records) -> "GoldEchoBackend":
        return cls({r.item_id: (r.time_spans.to_pairs(), r.correct_answer) for r in records})

    def generate(self, request: BackendRequest) -> str:
        spans, option = self.gold[request.item_id]
        if request.stage == "ground":
            return render_response(spans, rationale="The evidence lies in these spans.")
        return render_response(option=option, rationale="The clipped frames show this event.")


def _item_rng(seed: int, request: BackendRequest) -> random.Random:
    h = hashlib.sha256(f"{seed}:{request.item_id}:{request.stage}".encode()).hexdigest()
    return random.Random(int(h, 16))


class RandomBackend:
    """Seeded random spans and options; deterministic per (seed, item, stage)."""

    def __init__(self, seed: int = 0, max_spans: int = 3):
        self.seed = seed
        self.max_spans = max_spans

    def generate(self, request: BackendRequest) -> str:
        rng = _item_rng(self.seed, request)
        if request.stage == "ground":
            spans = []
            for _ in range(rng.randint(1, self.max_spans)):
                a, b = sorted(rng.uniform(0, request.duration_s) for _ in range(2))
                spans.append((a, b))
            return " ".join(render_span(a, b) for a, b in spans)
        return render_answer(rng.choice(OPTIONS))


MALFORMED_OUTPUTS = (
    "I think the answer is probably B.",
    "<span>[abc,def]</span> <answer>AB</answer>",
    "<span>12.5 to 30</span> <answer>A</answer><answer>C</answer>",
    "<span>[1e3,nan]</span> answer: D",
    "<answer>E</answer>",
)


class MalformedBackend:
    """Fixed corrupt strings: no span ever parses and no answer is well formed."""

    def generate(self, request: BackendRequest) -> str:
        h = int(hashlib.sha256(f"{request.item_id}:{request.stage}".encode()).hexdigest(), 16)
        return MALFORMED_OUTPUTS[h % len(MALFORMED_OUTPUTS)]


class RecordingBackend:
    """Wraps a backend and keeps every request envelope it forwards."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.requests: list[BackendRequest] = []
        self._lock = threading.Lock()

    def generate(self, request: BackendRequest) -> str:
        with self._lock:
            self.requests.append(request)
        return self.inner.generate(request)


class HttpBackend:
    """``POST {base_url}/generate`` with the request document as JSON."""

    def __init__(self, base_url: str | None = None, timeout_s: float = 60.0):
        base_url = base_url or os.environ.get(ENDPOINT_ENV)
        if not base_url:
            raise ValueError(f"no backend URL given and {ENDPOINT_ENV} is unset")
        self.url = base_url.rstrip("/") + "/generate"
        self.timeout_s = timeout_s

    def generate(self, request: BackendRequest) -> str:
        body = json.dumps(request.to_dict()).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                payload = json.loads(resp.read().decode())
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as e:
            raise BackendError(f"{self.url}: {e}") from e
        if "raw_text" not in payload:
            raise BackendError(f"{self.url}: response lacks raw_text")
        return payload["raw_text"]


class PipeBackend:
    """Child process reading request lines on stdin, writing response lines."""

    def __init__(self, command: Sequence[str]):
        self._proc = subprocess.Popen(list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        self._lock = threading.Lock()

    def generate(self, request: BackendRequest) -> str:
        with self._lock:
            try:
                self._proc.stdin.write(json.dumps(request.to_dict()) + "\n")
                self._proc.stdin.flush()
                line = self._proc.stdout.readline()
            except OSError as e:
                raise BackendError(f"backend pipe failed: {e}") from e
        if not line:
            raise BackendError("backend process closed its output")
        try:
            return json.loads(line)["raw_text"]
        except (json.JSONDecodeError, KeyError) as e:
            raise BackendError(f"bad backend response: {line!r}") from e

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)


def serve_stdio(backend: Backend, stdin: IO[str], stdout: IO[str]) -> None:
    """Answer JSON-lines requests with ``backend`` until EOF."""
    for line in stdin:
        if not line.strip():
            continue
        raw = backend.generate(BackendRequest.from_dict(json.loads(line)))
        stdout.write(json.dumps({"raw_text": raw}) + "\n")
        stdout.flush()


def call_with_retry(
    backend: Backend,
    request: BackendRequest,
    retries: int = 2,
    backoff_s: float = 0.1,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Retry transport failures with exponential backoff.

    Only :class:`BackendError` is retried; a malformed answer is a valid,
    scoreable response.
    """
    for attempt in range(retries + 1):
        try:
            return backend.generate(request)
        except BackendError:
            if attempt == retries:
                raise
            sleep(backoff_s * (2**attempt))
    raise AssertionError("unreachable")  # pragma: no cover


def make_backend(kind: str, records=None, seed: int = 0, url: str | None = None, command: Sequence[str] = ()) -> Backend:
    if kind == "echo":
        if records is None:
            raise ValueError("echo backend needs gold records")
        return GoldEchoBackend.from_records(records)
    if kind == "random":
        return RandomBackend(seed)
    if kind == "malformed":
        return MalformedBackend()
    if kind == "http":
        return HttpBackend(url)
    if kind == "pipe":
        if not command:
            raise ValueError("pipe backend needs a command")
        return PipeBackend(command)
    raise ValueError(f"unknown backend {kind!r}")
