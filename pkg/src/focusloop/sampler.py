"""Query-aware keyframe preview.

Two selection modes share one entry point, :func:`sample_preview`:

* relevance-diversity: greedy picks scored by query cosine times a
  multiplicative temporal-proximity penalty against everything already picked;
* temporal clustering: seeded k-means over frame embeddings with a
  duration-scaled cluster count, emitting the member nearest each centroid.

Routing between them looks only at the single best relevance score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .evidence import (
    MAX_KEYFRAMES,
    RELEVANCE_DIVERSITY,
    TEMPORAL_CLUSTERING,
    Embedding,
    FrameRef,
    KeyframeSet,
    PipelineConfig,
    Query,
)

LOCAL = "local"
GLOBAL = "global"


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredCandidate:
    frame: FrameRef
    relevance: float


def relevance_scores(candidates: Sequence[tuple[FrameRef, Embedding]], query: Query) -> list[ScoredCandidate]:
    q = query.embedding
    out = []
    for frame, emb in candidates:
        if emb.dim != q.dim:
            raise SamplerError(f"candidate embedding dim {emb.dim} != query dim {q.dim}")
        # clip guards 1-ulp overshoot of unit-vector dot products
        out.append(ScoredCandidate(frame, min(1.0, max(-1.0, emb.dot(q)))))
    return out


def objective_value(selection: Sequence[ScoredCandidate], alpha: float, lambda_d: float) -> float:
    """Relevance sum minus pairwise exp(-alpha*|dt|) penalty. Diagnostic only."""
    if not selection:
        raise SamplerError("selection must be non-empty")
    total = sum(c.relevance for c in selection)
    penalty = 0.0
    for i in range(len(selection)):
        for j in range(i + 1, len(selection)):
            dt = abs(selection[i].frame.timestamp_sec - selection[j].frame.timestamp_sec)
            penalty += math.exp(-alpha * dt)
    return total - lambda_d * penalty


def _better(score: float, cand: ScoredCandidate, best_score: float, best: ScoredCandidate | None) -> bool:
    if best is None or score > best_score:
        return True
    if score < best_score:
        return False
    return cand.frame.sort_key < best.frame.sort_key


def greedy_order(candidates: Sequence[ScoredCandidate], k: int, alpha: float) -> list[ScoredCandidate]:
    """Selection order of the greedy rule (before the timestamp sort)."""
    if k <= 0:
        raise SamplerError(f"k must be >= 1, got {k}")
    if not candidates:
        raise SamplerError("no candidates")
    if k > len(candidates):
        raise SamplerError(f"k={k} exceeds {len(candidates)} candidates")
    # running product of (1 - exp(-alpha*|dt|)) against the picks so far, in pick order
    factor = [1.0] * len(candidates)
    taken = [False] * len(candidates)
    picks: list[ScoredCandidate] = []
    for _ in range(k):
        best_i, best_score, best = -1, -math.inf, None
        for i, c in enumerate(candidates):
            if taken[i]:
                continue
            s = c.relevance * factor[i]
            if _better(s, c, best_score, best):
                best_i, best_score, best = i, s, c
        taken[best_i] = True
        picks.append(best)
        t = best.frame.timestamp_sec
        for i, c in enumerate(candidates):
            if not taken[i]:
                factor[i] *= 1.0 - math.exp(-alpha * abs(c.frame.timestamp_sec - t))
    return picks


def greedy_select(candidates: Sequence[ScoredCandidate], k: int, alpha: float) -> KeyframeSet:
    picks = greedy_order(candidates, k, alpha)
    return KeyframeSet(tuple(c.frame for c in picks), RELEVANCE_DIVERSITY)


def global_gate(scores: Sequence[ScoredCandidate], tau_global: float) -> str:
    if not scores:
        raise SamplerError("no scores")
    return GLOBAL if max(c.relevance for c in scores) < tau_global else LOCAL


def cluster_count(duration_sec: float, k_base: int = 8, cap: int = MAX_KEYFRAMES,
                  seconds_per_cluster: int = 60) -> int:
    if not duration_sec > 0:
        raise SamplerError(f"duration must be > 0, got {duration_sec}")
    return min(cap, max(k_base, math.ceil(duration_sec / seconds_per_cluster)))


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    d2 = np.sum((x - x[centers[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        centers.append(nxt)
        d2 = np.minimum(d2, np.sum((x - x[nxt]) ** 2, axis=1))
    return x[centers].copy()


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (x * x).sum(axis=1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(axis=1)[None, :]


def kmeans(x: np.ndarray, k: int, seed: int, max_iter: int = 100, tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from k-means++ seeds. Returns (labels, centroids).

    Empty clusters keep their previous centroid and are simply left empty.
    """
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(x, k, rng)
    for _ in range(max_iter):
        labels = np.argmin(_sq_dists(x, centroids), axis=1)
        new = centroids.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = x[members].mean(axis=0)
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        if shift < tol:
            break
    return np.argmin(_sq_dists(x, centroids), axis=1), centroids


def cluster_select(candidates: Sequence[tuple[FrameRef, Embedding]], k: int, seed: int) -> KeyframeSet:
    n = len(candidates)
    if not 1 <= k <= n:
        raise SamplerError(f"k={k} out of range [1, {n}]")
    if k > MAX_KEYFRAMES:
        raise SamplerError(f"k={k} exceeds keyframe cap {MAX_KEYFRAMES}")
    x = np.stack([emb.values for _, emb in candidates])
    labels, centroids = kmeans(x, k, seed)
    chosen: dict[tuple[str, int], FrameRef] = {}
    for c in range(k):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        dist = np.sum((x[idx] - centroids[c]) ** 2, axis=1)
        j = min(range(idx.size), key=lambda j: (dist[j], candidates[idx[j]][0].sort_key))
        f = candidates[int(idx[j])][0]
        chosen.setdefault(f.key, f)
    return KeyframeSet(tuple(chosen.values()), TEMPORAL_CLUSTERING)


def sample_preview(candidates: Sequence[tuple[FrameRef, Embedding]], query: Query,
                   config: PipelineConfig, duration_sec: float) -> KeyframeSet:
    if not candidates:
        raise SamplerError("empty candidate pool")
    scores = relevance_scores(candidates, query)
    if global_gate(scores, config.tau_global) == LOCAL:
        return greedy_select(scores, min(config.k_base, len(scores)), config.alpha)
    k = cluster_count(duration_sec, config.k_base, config.cluster_cap, config.seconds_per_cluster)
    return cluster_select(candidates, min(k, len(candidates)), config.rng_seed)


def one_fps_pool(frames: Sequence[FrameRef]) -> list[FrameRef]:
    """First frame of every whole second."""
    pool, last = [], None
    for f in sorted(frames, key=lambda f: f.sort_key):
        sec = math.floor(f.timestamp_sec)
        if sec != last:
            pool.append(f)
            last = sec
    return pool


__all__ = [
    "GLOBAL", "LOCAL", "SamplerError", "ScoredCandidate",
    "cluster_count", "cluster_select", "global_gate", "greedy_order", "greedy_select",
    "kmeans", "objective_value", "one_fps_pool", "relevance_scores", "sample_preview",
]
