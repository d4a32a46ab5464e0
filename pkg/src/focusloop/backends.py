"""Embedding and answer-model backends.

Real models sit behind :class:`EmbeddingProvider` / :class:`AnswerModel`.
The mocks here are deterministic so whole pipeline runs can be golden-tested.
"""

from __future__ import annotations

import base64
import hashlib
import math
import os
import threading
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Sequence, runtime_checkable

import numpy as np
import requests

from .evidence import Embedding, EvidenceError, EvidenceSet, GenerationResult, PipelineConfig, Query

WIRE_VERSION = 1
ENDPOINT_ENV = "FOCUSLOOP_ENDPOINT"
AUTH_ENV = "FOCUSLOOP_AUTH"


class BackendError(RuntimeError):
    pass


@runtime_checkable
class EmbeddingProvider(Protocol):
    concurrent_safe: bool

    def dim(self) -> int: ...

    def embed_text(self, text: str) -> Embedding: ...

    def embed_frame(self, payload: bytes) -> Embedding: ...


@runtime_checkable
class AnswerModel(Protocol):
    def generate(self, query: Query, evidence: EvidenceSet, payloads: Sequence[bytes],
                 prompt_template: str) -> GenerationResult: ...


def mock_embed(data: bytes | str, dim: int, seed: int = 0) -> Embedding:
    """Keyed-hash embedding: blake2b(data, key=seed) seeds a normal draw of ``dim`` reals."""
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if isinstance(data, str):
        data = data.encode("utf-8")
    key = int(seed).to_bytes(8, "little", signed=True)
    digest = hashlib.blake2b(data, key=key, digest_size=32).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return Embedding(rng.standard_normal(dim))


@dataclass(frozen=True)
class MockEmbedder:
    embedding_dim: int = 64
    seed: int = 0
    concurrent_safe: bool = True

    def dim(self) -> int:
        return self.embedding_dim

    def embed_text(self, text: str) -> Embedding:
        return mock_embed(text, self.embedding_dim, self.seed)

    def embed_frame(self, payload: bytes) -> Embedding:
        return mock_embed(payload, self.embedding_dim, self.seed)


def uniform_logprobs(prob: float, length: int) -> tuple[float, ...]:
    """``length`` tokens that each had probability ``prob``."""
    return (math.log(prob),) * length


def peaked_attention(evidence: EvidenceSet, peak_sec: float) -> tuple[float, ...]:
    return tuple(1.0 / (1.0 + abs(f.timestamp_sec - peak_sec)) for f in evidence.frames)


@dataclass(frozen=True)
class ScriptStep:
    text: str
    token_logprobs: tuple[float, ...]
    frame_attention: Optional[tuple[float, ...]] = None
    attention_peak_sec: Optional[float] = None
    round: Optional[int] = None
    min_evidence: Optional[int] = None
    max_evidence: Optional[int] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptStep":
        lps = d.get("token_logprobs")
        if lps is None and "prob" in d:
            lps = uniform_logprobs(d["prob"], int(d.get("length", 4)))
        if lps is None:
            raise BackendError("script step needs token_logprobs or prob")
        att = d.get("frame_attention")
        return cls(
            text=d["text"],
            token_logprobs=tuple(lps),
            frame_attention=tuple(att) if att is not None else None,
            attention_peak_sec=d.get("attention_peak_sec"),
            round=d.get("round"),
            min_evidence=d.get("min_evidence"),
            max_evidence=d.get("max_evidence"),
        )

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"text": self.text, "token_logprobs": list(self.token_logprobs)}
        for name in ("frame_attention", "attention_peak_sec", "round", "min_evidence", "max_evidence"):
            v = getattr(self, name)
            if v is not None:
                d[name] = list(v) if isinstance(v, tuple) else v
        return d


class ScriptedAnswerModel:
    """Replays one step per ``generate`` call, in order."""

    concurrent_safe = False

    def __init__(self, steps: Sequence[ScriptStep | dict]):
        self.steps = [s if isinstance(s, ScriptStep) else ScriptStep.from_dict(s) for s in steps]
        self.calls = 0

    def generate(self, query, evidence, payloads, prompt_template) -> GenerationResult:
        if self.calls >= len(self.steps):
            raise BackendError(f"script exhausted after {len(self.steps)} steps")
        step = self.steps[self.calls]
        n = len(evidence)
        if step.round is not None and step.round != self.calls:
            raise BackendError(f"script step expects round {step.round}, got call {self.calls}")
        if step.min_evidence is not None and n < step.min_evidence:
            raise BackendError(f"script step needs >= {step.min_evidence} evidence frames, got {n}")
        if step.max_evidence is not None and n > step.max_evidence:
            raise BackendError(f"script step needs <= {step.max_evidence} evidence frames, got {n}")
        self.calls += 1
        att = step.frame_attention
        if att is None and step.attention_peak_sec is not None:
            att = peaked_attention(evidence, step.attention_peak_sec)
        try:
            result = GenerationResult(step.text, step.token_logprobs, att)
            result.check_alignment(evidence)
        except EvidenceError as exc:
            raise BackendError(f"script step {self.calls - 1}: {exc}") from exc
        return result


def format_mmss(seconds: float) -> str:
    s = max(0, int(round(seconds)))
    if s >= 3600:
        return f"[{s // 3600}:{s % 3600 // 60:02d}:{s % 60:02d}]"
    return f"[{s // 60:02d}:{s % 60:02d}]"


class PlantedEvidenceModel:
    """Simulated answer model for synthetic manifests with a known gold interval.

    Confident and correct once any evidence frame falls inside the gold
    interval; otherwise unconfident, and (with probability ``cite_rate``)
    cites a jittered timestamp near the gold centre. Attention always peaks
    at the evidence frame nearest the gold centre.
    """

    concurrent_safe = False

    def __init__(self, gold_interval: tuple[float, float], answer: str, seed: int = 0,
                 cite_rate: float = 0.8, cite_jitter_sec: float = 2.0,
                 confident_prob: float = 0.995, unsure_prob: float = 0.9, length: int = 6):
        self.gold = (float(gold_interval[0]), float(gold_interval[1]))
        self.answer = answer
        self.seed = seed
        self.cite_rate = cite_rate
        self.cite_jitter_sec = cite_jitter_sec
        self.confident_prob = confident_prob
        self.unsure_prob = unsure_prob
        self.length = length
        self.calls = 0

    def generate(self, query, evidence, payloads, prompt_template) -> GenerationResult:
        rng = np.random.default_rng([self.seed, self.calls])
        self.calls += 1
        lo, hi = self.gold
        centre = 0.5 * (lo + hi)
        att = peaked_attention(evidence, centre)
        if any(lo <= f.timestamp_sec <= hi for f in evidence.frames):
            return GenerationResult(self.answer, uniform_logprobs(self.confident_prob, self.length), att)
        if rng.random() < self.cite_rate:
            cited = centre + rng.uniform(-self.cite_jitter_sec, self.cite_jitter_sec)
            text = f"Not sure; the relevant moment may be near {format_mmss(cited)}."
        else:
            text = "Not sure; the evidence is inconclusive."
        return GenerationResult(text, uniform_logprobs(self.unsure_prob, self.length), att)


def build_request(query: Query, evidence: EvidenceSet, payloads: Sequence[bytes],
                  config: PipelineConfig) -> dict:
    return {
        "version": WIRE_VERSION,
        "query": query.text,
        "prompt_template": config.prompt_template,
        "frames": [
            {"t_ms": int(round(f.timestamp_sec * 1000)), "data_b64": base64.b64encode(p).decode("ascii")}
            for f, p in zip(evidence.frames, payloads)
        ],
        "want_logprobs": True,
        "want_attention": bool(config.want_attention),
        "max_tokens": int(config.max_tokens),
    }


def parse_response(body: Any, n_frames: Optional[int] = None, raw: str = "") -> GenerationResult:
    excerpt = raw[:200]
    if not isinstance(body, dict):
        raise BackendError(f"response is not a JSON object: {excerpt!r}")
    text = body.get("text")
    if not isinstance(text, str):
        raise BackendError(f"response missing 'text': {excerpt!r}")
    lps = body.get("token_logprobs")
    if not isinstance(lps, list) or not lps:
        raise BackendError(f"response missing 'token_logprobs': {excerpt!r}")
    att = body.get("frame_attention")
    if att is not None and not isinstance(att, list):
        raise BackendError(f"'frame_attention' must be a list: {excerpt!r}")
    try:
        result = GenerationResult(text, tuple(lps), tuple(att) if att is not None else None)
    except (EvidenceError, TypeError, ValueError) as exc:
        raise BackendError(f"malformed response ({exc}): {excerpt!r}") from exc
    if n_frames is not None and result.frame_attention is not None and len(result.frame_attention) != n_frames:
        raise BackendError(
            f"frame_attention has {len(result.frame_attention)} entries for {n_frames} frames: {excerpt!r}")
    return result


def http_generate(endpoint: str, request: dict, timeout: float = 60.0,
                  headers: Optional[dict] = None, session: Optional[requests.Session] = None) -> GenerationResult:
    post = (session or requests).post
    try:
        resp = post(endpoint, json=request, timeout=timeout, headers=headers or {})
    except requests.RequestException as exc:
        raise BackendError(f"transport failure talking to {endpoint}: {exc}") from exc
    raw = resp.text
    if not 200 <= resp.status_code < 300:
        raise BackendError(f"HTTP {resp.status_code} from {endpoint}: {raw[:200]!r}")
    try:
        body = resp.json()
    except ValueError as exc:
        raise BackendError(f"invalid JSON from {endpoint}: {raw[:200]!r}") from exc
    return parse_response(body, len(request.get("frames", [])), raw)


@dataclass
class HttpAnswerModel:
    endpoint: Optional[str] = None
    config: PipelineConfig = field(default_factory=PipelineConfig)
    timeout: float = 60.0
    headers: dict = field(default_factory=dict)
    max_in_flight: int = 4
    concurrent_safe: bool = True

    def __post_init__(self):
        self.endpoint = os.environ.get(ENDPOINT_ENV) or self.endpoint
        if not self.endpoint:
            raise BackendError(f"no endpoint given and {ENDPOINT_ENV} is unset")
        auth = os.environ.get(AUTH_ENV)
        if auth and "Authorization" not in self.headers:
            self.headers = {**self.headers, "Authorization": auth}
        self._slots = threading.BoundedSemaphore(self.max_in_flight)
        self._session = requests.Session()

    def generate(self, query, evidence, payloads, prompt_template) -> GenerationResult:
        req = build_request(query, evidence, payloads, self.config)
        req["prompt_template"] = prompt_template
        with self._slots:
            return http_generate(self.endpoint, req, self.timeout, self.headers, self._session)
