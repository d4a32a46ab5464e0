"""Preview -> gate -> ground -> retrieve -> re-generate loop, plus dataset runs."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from hashlib import sha256
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .archive import ArchiveReader, read_embedding_sidecar
from .backends import AnswerModel, EmbeddingProvider
from .evidence import (
    Embedding,
    EvidenceSet,
    FrameRef,
    GenerationResult,
    PipelineConfig,
    Query,
)
from .gate import should_refine
from .grounding import GroundingError, GroundingOutcome, ground
from .sampler import global_gate, one_fps_pool, relevance_scores, sample_preview

log = logging.getLogger(__name__)

TRACE_VERSION = 1
MODES = ("baseline", "cot_only", "adafocus", "dense_oracle", "random_retrieval")
IO_MODES = ("zero-cache", "preload")

PROMPT_TEMPLATES = {
    "cite-timestamps-v1": (
        "Answer the question using the video frames. Each frame is labelled with its "
        "timestamp. If you are unsure, cite the moment you would like to inspect more "
        "closely as [mm:ss] (or [h:mm:ss] for long videos).\n\nQuestion: {query}"
    ),
}


class PipelineError(RuntimeError):
    pass


class ManifestError(ValueError):
    pass


# -- frame sources ----------------------------------------------------------

class ZeroCacheSource:
    """Reads payloads from disk on every request."""

    name = "zero-cache"

    def __init__(self, reader: ArchiveReader):
        self.reader = reader

    def fetch(self, frames: Sequence[FrameRef]) -> list[bytes]:
        return self.reader.read_frames(frames) if frames else []


class PreloadedSource:
    """Reads every payload once up front and serves from memory afterwards."""

    name = "preload"

    def __init__(self, reader: ArchiveReader):
        self.reader = reader
        self._payloads = {f.index: p for f, p in reader.preload_all()}

    def fetch(self, frames: Sequence[FrameRef]) -> list[bytes]:
        return [self._payloads[f.index] for f in frames]


def make_source(reader: ArchiveReader, io: str):
    if io == "zero-cache":
        return ZeroCacheSource(reader)
    if io == "preload":
        return PreloadedSource(reader)
    raise PipelineError(f"unknown io mode {io!r}")


# -- metrics -----------------------------------------------------------------

def token_footprint(evidence: EvidenceSet | int | float, tokens_per_frame: int):
    if tokens_per_frame < 1:
        raise ValueError("tokens_per_frame must be >= 1")
    n = evidence if isinstance(evidence, (int, float)) else len(evidence)
    return n * tokens_per_frame


def footprint_comparison(dense_frames: float, adaptive_frames: float, tokens_per_frame: int) -> dict:
    dense = token_footprint(dense_frames, tokens_per_frame)
    adaptive = token_footprint(adaptive_frames, tokens_per_frame)
    return {
        "dense_frames": dense_frames,
        "adaptive_frames": adaptive_frames,
        "dense_tokens": dense,
        "adaptive_tokens": adaptive,
        "ratio": dense / adaptive if adaptive else math.inf,
    }


def format_footprint(cmp: dict) -> str:
    r = cmp["ratio"]
    return "\n".join([
        f"dense_oracle  frames {cmp['dense_frames']:>8,.1f}  tokens {cmp['dense_tokens']:>10,.0f}",
        f"adaptive      frames {cmp['adaptive_frames']:>8,.1f}  tokens {cmp['adaptive_tokens']:>10,.0f}",
        f"ratio         {r:.1f}× (~{round(r)}×)",
    ])


def interval_iou(a: Sequence[float], b: Sequence[float]) -> float:
    (a0, a1), (b0, b1) = a, b
    if a0 > a1 or b0 > b1:
        raise ValueError(f"inverted interval: {a} / {b}")
    if a0 == a1 and b0 == b1:
        return 1.0 if a0 == b0 else 0.0
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - inter
    return inter / union if union > 0 else 0.0


def normalize_answer(text: str) -> str:
    t = text.strip().casefold()
    if t.endswith("."):
        t = t[:-1].rstrip()
    return t


def window_budget(preview_size: int, config: PipelineConfig, fps: float) -> int:
    return preview_size + config.n_max * (math.ceil(2 * config.delta_w_sec * fps) + 1)


# -- single run --------------------------------------------------------------

@dataclass
class PipelineResult:
    answer: str
    evidence: EvidenceSet
    trace: dict


def load_candidates(reader: ArchiveReader, sidecar) -> list[tuple[FrameRef, Embedding]]:
    """1-fps candidate pool joined with sidecar embeddings."""
    records = read_embedding_sidecar(sidecar) if isinstance(sidecar, (str, Path)) else list(sidecar)
    by_frame: dict[int, Embedding] = {}
    for ts, emb in records:
        f = reader.frame_at_ms(ts)
        if f is None:
            raise PipelineError(f"sidecar timestamp {ts} ms has no frame in {reader.path}")
        by_frame[f.index] = emb
    pool = one_fps_pool([reader.frames[i] for i in sorted(by_frame)])
    return [(f, by_frame[f.index]) for f in pool]


def _ms(t0: float) -> float:
    return round((time.perf_counter() - t0) * 1000.0, 3)


def _dense_frames(reader: ArchiveReader, cap: int) -> list[FrameRef]:
    frames = reader.frames
    if len(frames) <= cap:
        return list(frames)
    pick = np.unique(np.linspace(0, len(frames) - 1, cap).round().astype(int))
    return [frames[i] for i in pick]


def run_pipeline(archive, sidecar, query: str | Query, config: PipelineConfig,
                 embedder: EmbeddingProvider, model: AnswerModel, *, mode: str = "adafocus",
                 io: str = "zero-cache", entry_seed: int = 0,
                 hash_payloads: bool = False) -> PipelineResult:
    """Answer one query over one archive.

    ``archive`` is a path or an open :class:`ArchiveReader`; ``sidecar`` a path or
    a list of ``(timestamp_ms, Embedding)``. The returned trace is JSON-ready.
    """
    if mode not in MODES:
        raise PipelineError(f"unknown mode {mode!r}")
    own = not isinstance(archive, ArchiveReader)
    reader = ArchiveReader(archive) if own else archive
    try:
        return _run(reader, sidecar, query, config, embedder, model, mode, io, entry_seed, hash_payloads)
    finally:
        if own:
            reader.close()


def _run(reader, sidecar, query, config, embedder, model, mode, io, entry_seed, hash_payloads):
    acct = reader.accounting
    duration = reader.duration_sec
    trace: dict = {
        "version": TRACE_VERSION,
        "mode": mode,
        "io": io,
        "source_id": reader.source_id,
        "config": config.to_dict(),
        "rounds": [],
    }

    t0 = time.perf_counter()
    before = acct.snapshot()
    source = make_source(reader, io)
    trace["io_setup"] = {"wall_ms": _ms(t0), **acct.since(before)}

    if not isinstance(query, Query):
        query = Query(query, embedder.embed_text(query))
    trace["query"] = query.text
    payloads: dict[int, bytes] = {}

    # preview
    before = acct.snapshot()
    t0 = time.perf_counter()
    if mode == "dense_oracle":
        preview_frames = _dense_frames(reader, config.dense_cap)
        trace["preview"] = {"mode": "dense", "frames": [f.index for f in preview_frames]}
    else:
        candidates = load_candidates(reader, sidecar)
        if not candidates:
            raise PipelineError("empty candidate pool")
        scores = relevance_scores(candidates, query)
        route = global_gate(scores, config.tau_global)
        kset = sample_preview(candidates, query, config, duration)
        preview_frames = list(kset.frames)
        trace["preview"] = {
            "mode": kset.mode,
            "route": route,
            "pool_size": len(candidates),
            "max_relevance": max(s.relevance for s in scores),
            "tau_global": config.tau_global,
            "frames": [f.index for f in preview_frames],
        }
    for f, p in zip(preview_frames, source.fetch(preview_frames)):
        payloads[f.index] = p
    trace["preview"]["wall_ms"] = _ms(t0)
    trace["preview"].update(acct.since(before))

    evidence = EvidenceSet(tuple(preview_frames))
    preview_size = len(evidence)
    if mode in ("adafocus", "random_retrieval"):
        cap = config.n_max
    elif mode == "cot_only":
        cap = config.cot_rounds
    else:
        cap = 0
    retrieve = mode in ("adafocus", "random_retrieval")
    rng = np.random.default_rng([config.rng_seed, entry_seed])

    def generate(ev: EvidenceSet) -> tuple[GenerationResult, float]:
        t = time.perf_counter()
        res = model.generate(query, ev, [payloads[f.index] for f in ev.frames], config.prompt_template)
        res.check_alignment(ev)
        return res, _ms(t)

    result, gen_ms = generate(evidence)
    rounds_used = 0
    accepted_by = None
    while True:
        t = time.perf_counter()
        decision = should_refine(result, config)
        rec = {
            "round": rounds_used,
            "evidence_size": len(evidence),
            "answer": result.text,
            "tokens": result.length,
            "confidence": decision.confidence,
            "threshold": decision.threshold,
            "triggered": decision.triggered,
            "grounding": None,
            "window": None,
            "new_frames": [],
            "bytes_read_delta": 0,
            "payload_bytes_delta": 0,
            "wall_ms": {"generate": gen_ms, "gate": _ms(t)},
        }
        trace["rounds"].append(rec)
        if not decision.triggered:
            accepted_by = "gate"
            break
        if rounds_used >= cap:
            accepted_by = "round-cap"
            break

        if retrieve:
            before = acct.snapshot()
            t = time.perf_counter()
            if mode == "random_retrieval":
                outcome = GroundingOutcome(float(rng.uniform(0.0, duration)), "random")
            else:
                try:
                    outcome = ground(result, evidence, duration)
                except GroundingError as exc:
                    rec["grounding"] = {"error": str(exc)}
                    rec["wall_ms"]["ground"] = _ms(t)
                    accepted_by = "grounding-failure"
                    log.info("grounding failed, accepting current answer: %s", exc)
                    break
            rec["grounding"] = outcome.to_dict()
            rec["wall_ms"]["ground"] = _ms(t)

            t = time.perf_counter()
            lo, hi = reader.window_bounds(outcome.target_sec, config.delta_w_sec)
            window = reader.locate(lo, hi)
            fresh = [f for f in window if f.index not in payloads]
            for f, p in zip(fresh, source.fetch(fresh)):
                payloads[f.index] = p
            evidence = evidence.union(window)
            rec["window"] = {
                "target_sec": outcome.target_sec,
                "half_width_sec": config.delta_w_sec,
                "lo_sec": lo,
                "hi_sec": hi,
                "frames": [f.index for f in window],
            }
            rec["new_frames"] = [f.index for f in fresh]
            rec["wall_ms"]["retrieve"] = _ms(t)
            delta = acct.since(before)
            rec["bytes_read_delta"] = delta["bytes_read"]
            rec["payload_bytes_delta"] = delta["payload_bytes"]

        rounds_used += 1
        evidence = evidence.with_rounds(rounds_used)
        result, gen_ms = generate(evidence)

    budget = window_budget(preview_size, config, reader.header.fps)
    if mode != "dense_oracle" and len(evidence) > budget:
        raise PipelineError(f"evidence size {len(evidence)} exceeds budget {budget}")
    trace["final"] = {
        "answer": result.text,
        "accepted_by": accepted_by,
        "rounds_used": rounds_used,
        "preview_size": preview_size,
        "total_frames": len(evidence),
        "total_visual_tokens": token_footprint(evidence, config.tokens_per_frame),
        "frame_budget": budget,
        "evidence": [f.index for f in evidence.frames],
        "evidence_times": [f.timestamp_sec for f in evidence.frames],
        # lifetime totals of the handle, index load included
        "bytes_read": acct.bytes_read,
        "payload_bytes": acct.payload_bytes,
        "file_size": reader.file_size,
    }
    if hash_payloads:
        trace["final"]["payload_sha256"] = [sha256(payloads[f.index]).hexdigest() for f in evidence.frames]
    return PipelineResult(result.text, evidence, trace)


VOLATILE_KEYS = {"wall_ms", "io", "io_setup", "bytes_read", "payload_bytes", "bytes_read_delta",
                 "payload_bytes_delta", "seeks", "frames_decoded"}


def strip_volatile(obj):
    """Drop timing and I/O accounting fields so traces from different I/O modes compare."""
    if isinstance(obj, dict):
        return {k: strip_volatile(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [strip_volatile(v) for v in obj]
    return obj


# -- datasets ----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    archive: Path
    sidecar: Path
    query: str
    gold_answer: Optional[str] = None
    gold_interval: Optional[tuple[float, float]] = None
    script: Optional[list] = None
    id: Optional[str] = None


def parse_manifest(data, base_dir: Path | str = ".") -> list[ManifestEntry]:
    base = Path(base_dir)
    if not isinstance(data, list):
        raise ManifestError("manifest must be a JSON array of entry objects")
    entries = []
    for i, d in enumerate(data):
        if not isinstance(d, dict):
            raise ManifestError(f"entry {i} is not an object")
        try:
            archive = base / d["archive"]
            sidecar = base / d["sidecar"]
            query = d["query"]
        except KeyError as exc:
            raise ManifestError(f"entry {i} missing field {exc}") from None
        for p in (archive, sidecar):
            if not p.exists():
                raise ManifestError(f"entry {i}: path does not exist: {p}")
        if not isinstance(query, str) or not query.strip():
            raise ManifestError(f"entry {i}: empty query")
        gi = d.get("gold_interval")
        if gi is not None:
            if len(gi) != 2 or not 0 <= gi[0] <= gi[1]:
                raise ManifestError(f"entry {i}: bad gold_interval {gi}")
            gi = (float(gi[0]), float(gi[1]))
        entries.append(ManifestEntry(archive, sidecar, query, d.get("gold_answer"), gi,
                                     d.get("script"), d.get("id", str(i))))
    return entries


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(data, path.parent)


ModelFactory = Callable[[ManifestEntry, int], AnswerModel]


@dataclass
class EntryResult:
    index: int
    entry_id: str
    ok: bool
    trace: Optional[dict] = None
    error: Optional[str] = None
    correct: Optional[bool] = None
    iou: Optional[float] = None
    window_hit: Optional[bool] = None

    def to_json(self) -> dict:
        d = {"entry": self.index, "id": self.entry_id, "ok": self.ok}
        if self.ok:
            d.update(correct=self.correct, iou=self.iou, window_hit=self.window_hit, trace=self.trace)
        else:
            d["error"] = self.error
        return d


@dataclass
class DatasetReport:
    mode: str
    config: PipelineConfig
    results: list[EntryResult] = field(default_factory=list)

    @property
    def failures(self) -> int:
        return sum(not r.ok for r in self.results)

    def summary(self) -> dict:
        ok = [r for r in self.results if r.ok]

        def mean(xs):
            xs = list(xs)
            return float(sum(xs) / len(xs)) if xs else None

        finals = [r.trace["final"] for r in ok]
        scored = [r.correct for r in ok if r.correct is not None]
        ious = [r.iou for r in ok if r.iou is not None]
        hits = [r.window_hit for r in ok if r.window_hit is not None]
        return {
            "mode": self.mode,
            "delta_w": self.config.delta_w_sec,
            "entries": len(self.results),
            "failed": self.failures,
            "mean_frames": mean(f["total_frames"] for f in finals),
            "mean_tokens": mean(f["total_visual_tokens"] for f in finals),
            "mean_rounds": mean(f["rounds_used"] for f in finals),
            "trigger_rate": mean(float(r.trace["rounds"][0]["triggered"]) for r in ok),
            "accuracy": mean(float(c) for c in scored),
            "scored": len(scored),
            "mean_iou": mean(ious),
            "iou_scored": len(ious),
            "window_hit_rate": mean(float(h) for h in hits),
            "hit_scored": len(hits),
            "mean_payload_bytes": mean(f["payload_bytes"] for f in finals),
        }


def _score(entry: ManifestEntry, trace: dict) -> tuple[Optional[bool], Optional[float], Optional[bool]]:
    correct = None
    if entry.gold_answer is not None:
        correct = normalize_answer(trace["final"]["answer"]) == normalize_answer(entry.gold_answer)
    iou = hit = None
    windows = [r["window"] for r in trace["rounds"] if r.get("window")]
    if entry.gold_interval is not None and windows:
        last = windows[-1]
        iou = interval_iou((last["lo_sec"], last["hi_sec"]), entry.gold_interval)
        g0, g1 = entry.gold_interval
        hit = any(w["lo_sec"] <= g1 and g0 <= w["hi_sec"] for w in windows)
    return correct, iou, hit


def run_entry(index: int, entry: ManifestEntry, config: PipelineConfig, embedder: EmbeddingProvider,
              model_factory: ModelFactory, mode: str, io: str = "zero-cache",
              hash_payloads: bool = False) -> EntryResult:
    eid = entry.id if entry.id is not None else str(index)
    try:
        with ArchiveReader(entry.archive) as reader:
            if entry.gold_interval is not None and entry.gold_interval[1] > reader.duration_sec:
                raise ManifestError(
                    f"gold interval {entry.gold_interval} exceeds duration {reader.duration_sec}")
            model = model_factory(entry, index)
            res = run_pipeline(reader, entry.sidecar, entry.query, config, embedder, model,
                               mode=mode, io=io, entry_seed=index, hash_payloads=hash_payloads)
    except Exception as exc:  # noqa: BLE001 - per-entry failures are recorded, run continues
        log.warning("entry %s failed: %s", eid, exc)
        return EntryResult(index, eid, False, error=f"{type(exc).__name__}: {exc}")
    correct, iou, hit = _score(entry, res.trace)
    return EntryResult(index, eid, True, res.trace, correct=correct, iou=iou, window_hit=hit)


def run_dataset(manifest: Sequence[ManifestEntry] | str | Path, config: PipelineConfig,
                embedder: EmbeddingProvider, model_factory: ModelFactory, mode: str = "adafocus",
                *, io: str = "zero-cache", workers: int = 1, hash_payloads: bool = False) -> DatasetReport:
    if mode not in MODES:
        raise PipelineError(f"unknown mode {mode!r}")
    entries = load_manifest(manifest) if isinstance(manifest, (str, Path)) else list(manifest)
    report = DatasetReport(mode, config)

    def one(i):
        return run_entry(i, entries[i], config, embedder, model_factory, mode, io, hash_payloads)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(len(entries))))
    else:
        results = [one(i) for i in range(len(entries))]
    report.results = sorted(results, key=lambda r: r.index)
    return report


def run_sweep(manifest, config: PipelineConfig, embedder: EmbeddingProvider, model_factory: ModelFactory,
              modes: Sequence[str], delta_ws: Sequence[float], **kwargs) -> list[DatasetReport]:
    entries = load_manifest(manifest) if isinstance(manifest, (str, Path)) else list(manifest)
    reports = []
    for mode in modes:
        for dw in delta_ws:
            reports.append(run_dataset(entries, replace(config, delta_w_sec=dw), embedder,
                                       model_factory, mode, **kwargs))
    return reports
