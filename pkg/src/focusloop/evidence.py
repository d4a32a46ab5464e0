"""Domain types shared by the sampler, gate, grounding, archive and pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

MAX_KEYFRAMES = 32

RELEVANCE_DIVERSITY = "relevance_diversity"
TEMPORAL_CLUSTERING = "temporal_clustering"
SAMPLING_MODES = (RELEVANCE_DIVERSITY, TEMPORAL_CLUSTERING)

GROUNDING_SOURCES = ("regex", "attention", "random")


class EvidenceError(ValueError):
    """Raised when a domain value violates its construction invariants."""


@dataclass(frozen=True, order=False)
class FrameRef:
    source_id: str
    index: int
    timestamp_sec: float
    payload_offset: int = 0
    payload_len: int = 0

    def __post_init__(self):
        if self.index < 0:
            raise EvidenceError(f"frame index must be >= 0, got {self.index}")
        if not self.timestamp_sec >= 0:
            raise EvidenceError(f"timestamp must be >= 0, got {self.timestamp_sec}")
        if self.payload_offset < 0 or self.payload_len < 0:
            raise EvidenceError("payload offset/length must be non-negative")

    @property
    def key(self) -> tuple[str, int]:
        return (self.source_id, self.index)

    @property
    def sort_key(self) -> tuple[float, int, str]:
        return (self.timestamp_sec, self.index, self.source_id)


@dataclass(frozen=True, eq=False)
class Embedding:
    """Unit-norm vector. Build through :func:`normalize_embedding`."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise EvidenceError("embedding must be a non-empty 1-d vector")
        norm = float(np.linalg.norm(v))
        if not np.isfinite(norm) or norm == 0.0:
            raise EvidenceError("embedding has zero or non-finite norm")
        v = v / norm
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def dot(self, other: "Embedding") -> float:
        if other.dim != self.dim:
            raise EvidenceError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return float(self.values @ other.values)

    def __eq__(self, other):
        return isinstance(other, Embedding) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


def normalize_embedding(values: Iterable[float]) -> Embedding:
    return Embedding(np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                                dtype=np.float64))


@dataclass(frozen=True)
class Query:
    text: str
    embedding: Embedding

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise EvidenceError("query text must be non-empty")


def _dedup_sorted(frames: Iterable[FrameRef]) -> tuple[FrameRef, ...]:
    seen: dict[tuple[str, int], FrameRef] = {}
    for f in frames:
        seen.setdefault(f.key, f)
    return tuple(sorted(seen.values(), key=lambda f: f.sort_key))


@dataclass(frozen=True)
class KeyframeSet:
    frames: tuple[FrameRef, ...]
    mode: str

    def __post_init__(self):
        if self.mode not in SAMPLING_MODES:
            raise EvidenceError(f"unknown sampling mode {self.mode!r}")
        frames = tuple(self.frames)
        if len({f.key for f in frames}) != len(frames):
            raise EvidenceError("keyframe set contains duplicate frames")
        if len(frames) > MAX_KEYFRAMES:
            raise EvidenceError(f"keyframe set larger than {MAX_KEYFRAMES}")
        object.__setattr__(self, "frames", tuple(sorted(frames, key=lambda f: f.sort_key)))

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class RetrievedWindow:
    target_sec: float
    half_width_sec: float
    frames: tuple[FrameRef, ...]
    grounding_source: Optional[str] = None
    payloads: tuple[bytes, ...] = field(default=(), repr=False, compare=False)
    lo_sec: float = 0.0
    hi_sec: float = math.inf

    def __post_init__(self):
        if not self.half_width_sec > 0:
            raise EvidenceError("half width must be > 0")
        if self.grounding_source is not None and self.grounding_source not in GROUNDING_SOURCES:
            raise EvidenceError(f"unknown grounding source {self.grounding_source!r}")
        for f in self.frames:
            if not (self.lo_sec <= f.timestamp_sec <= self.hi_sec):
                raise EvidenceError(
                    f"frame at {f.timestamp_sec}s outside window [{self.lo_sec}, {self.hi_sec}]")

    @property
    def interval(self) -> tuple[float, float]:
        return (self.lo_sec, self.hi_sec)


@dataclass(frozen=True)
class EvidenceSet:
    frames: tuple[FrameRef, ...]
    rounds: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise EvidenceError("rounds must be >= 0")
        object.__setattr__(self, "frames", _dedup_sorted(self.frames))

    def union(self, extra: Iterable[FrameRef]) -> "EvidenceSet":
        return EvidenceSet(self.frames + tuple(extra), self.rounds)

    def with_rounds(self, rounds: int) -> "EvidenceSet":
        return EvidenceSet(self.frames, rounds)

    def keys(self) -> list[tuple[str, int]]:
        return [f.key for f in self.frames]

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_logprobs: tuple[float, ...]
    frame_attention: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        lps = tuple(float(x) for x in self.token_logprobs)
        if not lps:
            raise EvidenceError("generation has no token logprobs")
        for lp in lps:
            if not lp <= 0.0:
                raise EvidenceError(f"token logprob must be <= 0, got {lp}")
        object.__setattr__(self, "token_logprobs", lps)
        if self.frame_attention is not None:
            att = tuple(float(a) for a in self.frame_attention)
            if any(not a >= 0.0 for a in att):
                raise EvidenceError("frame attention values must be >= 0")
            object.__setattr__(self, "frame_attention", att)

    @property
    def length(self) -> int:
        return len(self.token_logprobs)

    def check_alignment(self, evidence: Sequence[FrameRef] | EvidenceSet) -> None:
        n = len(evidence)
        if self.frame_attention is not None and len(self.frame_attention) != n:
            raise EvidenceError(
                f"frame_attention has {len(self.frame_attention)} entries for {n} evidence frames")


@dataclass(frozen=True)
class PipelineConfig:
    k_base: int = 8
    alpha: float = 0.5
    lambda_d: float = 1.0
    tau_global: float = 0.25
    gamma0: float = math.log(0.97)
    beta: float = 0.0
    tau: float = 0.97
    delta_w_sec: float = 1.5
    n_max: int = 3
    tokens_per_frame: int = 256
    rng_seed: int = 0
    # artifact-level settings
    dense_cap: int = 512
    cot_rounds: int = 1
    max_tokens: int = 512
    want_attention: bool = True
    prompt_template: str = "cite-timestamps-v1"
    cluster_cap: int = field(default=MAX_KEYFRAMES, init=False)
    seconds_per_cluster: int = field(default=60, init=False)

    def __post_init__(self):
        if self.k_base < 1:
            raise EvidenceError("k_base must be >= 1")
        if not self.alpha > 0:
            raise EvidenceError("alpha must be > 0")
        if self.lambda_d < 0:
            raise EvidenceError("lambda_d must be >= 0")
        if not -1.0 <= self.tau_global <= 1.0:
            raise EvidenceError("tau_global must lie in [-1, 1]")
        if self.beta < 0:
            raise EvidenceError("beta must be >= 0")
        if not 0.0 < self.tau <= 1.0:
            raise EvidenceError("tau must lie in (0, 1]")
        if not self.delta_w_sec > 0:
            raise EvidenceError("delta_w_sec must be > 0")
        if self.n_max < 0:
            raise EvidenceError("n_max must be >= 0")
        if self.tokens_per_frame < 1:
            raise EvidenceError("tokens_per_frame must be >= 1")
        if self.dense_cap < 1 or self.cot_rounds < 0:
            raise EvidenceError("dense_cap must be >= 1 and cot_rounds >= 0")

    @classmethod
    def from_tau(cls, tau: float, **kwargs) -> "PipelineConfig":
        """Fixed-threshold config: gamma0 = ln(tau), beta = 0."""
        return cls(tau=tau, gamma0=math.log(tau), beta=0.0, **kwargs)

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)
