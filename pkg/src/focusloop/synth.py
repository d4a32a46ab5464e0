"""Synthetic archives and manifests with planted evidence.

Used by the test suite, the experiment scripts and ``focusloop bench`` golden
runs. Everything is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .archive import write_archive, write_embedding_sidecar
from .backends import MockEmbedder, format_mmss, uniform_logprobs

QUERIES = [
    "When does the red cup fall off the table?",
    "What colour is the car that enters the garage?",
    "What does the presenter write on the whiteboard?",
    "How many people walk through the door?",
    "What is the overall topic of the video?",
]


@dataclass(frozen=True)
class SyntheticVideo:
    archive: Path
    sidecar: Path
    duration_sec: float
    fps: float
    n_frames: int
    gold_interval: tuple[float, float]
    query: str


def frame_payload(rng: np.random.Generator, name: str, i: int, mean_size: int = 96) -> bytes:
    size = int(rng.integers(mean_size // 2, mean_size * 3 // 2))
    return f"{name}#{i}|".encode() + rng.bytes(size)


def make_video(directory, name: str, *, duration_sec: float, fps: float = 1.0,
               gold_interval: tuple[float, float] = (10.0, 12.0), query: str = QUERIES[0],
               plant: str = "none", embedder: Optional[MockEmbedder] = None, seed: int = 0,
               payload_size: int = 96) -> SyntheticVideo:
    """Write ``<name>.fafv`` and ``<name>.faem`` under ``directory``.

    ``plant`` controls frame/query similarity: ``strong`` makes gold frames the
    most relevant, ``decoy`` plants a relevant peak away from the gold interval,
    ``flat`` keeps every frame nearly orthogonal to the query (global routing),
    ``none`` leaves similarities at noise level.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    embedder = embedder or MockEmbedder()
    rng = np.random.default_rng(seed)
    fps_millis = int(round(fps * 1000))
    n = int(round(duration_sec * fps))
    times_ms = [int(round(i * 1_000_000 / fps_millis)) for i in range(n)]
    frames = [(t, frame_payload(rng, name, i, payload_size)) for i, t in enumerate(times_ms)]
    arch = directory / f"{name}.fafv"
    write_archive(frames, fps_millis, arch, duration_ms=int(round(duration_sec * 1000)))

    q = embedder.embed_text(query).values
    dim = q.shape[0]
    g0, g1 = gold_interval
    decoy = (g1 + duration_sec / 2) % duration_sec
    records = []
    for t in times_ms:
        ts = t / 1000.0
        noise = rng.standard_normal(dim)
        noise -= (noise @ q) * q
        noise /= np.linalg.norm(noise)
        if plant == "flat":
            cos = float(rng.uniform(-0.05, 0.05))
        elif plant == "strong" and g0 <= ts <= g1:
            cos = float(rng.uniform(0.6, 0.7))
        elif plant == "decoy" and abs(ts - decoy) <= 1.0:
            cos = float(rng.uniform(0.6, 0.7))
        else:
            cos = float(rng.uniform(0.0, 0.2))
        v = cos * q + np.sqrt(1 - cos * cos) * noise
        records.append((t, v))
    side = directory / f"{name}.faem"
    write_embedding_sidecar(records, side)
    return SyntheticVideo(arch, side, float(duration_sec), fps, n, (float(g0), float(g1)), query)


def scripted_steps(rng: np.random.Generator, gold_centre: float, n_steps: Optional[int] = None) -> list[dict]:
    """A script that stays unsure for a few rounds (citing the gold centre or
    pointing attention at it) and then becomes confident."""
    n_unsure = int(rng.integers(0, 5)) if n_steps is None else n_steps
    steps = []
    for r in range(n_unsure):
        if rng.random() < 0.7:
            steps.append({"text": f"Possibly around {format_mmss(gold_centre)}.",
                          "token_logprobs": list(uniform_logprobs(0.9, 5))})
        else:
            steps.append({"text": "Unclear from these frames.",
                          "token_logprobs": list(uniform_logprobs(0.92, 4)),
                          "attention_peak_sec": gold_centre})
    steps.append({"text": "B", "token_logprobs": list(uniform_logprobs(0.99, 3))})
    # spare confident steps so the script never runs dry
    steps += [dict(steps[-1]) for _ in range(5)]
    return steps


def make_manifest(directory, n_entries: int, *, seed: int = 0, backend: str = "planted",
                  durations: tuple[float, float] = (60.0, 600.0), fps_choices=(1.0, 2.0),
                  embedder: Optional[MockEmbedder] = None, payload_size: int = 96) -> Path:
    """Write ``n_entries`` synthetic videos plus ``manifest.json``; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_entries):
        duration = float(int(rng.integers(int(durations[0]), int(durations[1]) + 1)))
        fps = float(fps_choices[int(rng.integers(len(fps_choices)))])
        length = float(rng.integers(2, 7))
        g0 = float(int(rng.integers(0, int(duration - length))))
        gold = (g0, g0 + length)
        plant = ["none", "strong", "decoy", "flat"][int(rng.integers(4))]
        query = QUERIES[i % len(QUERIES)]
        vid = make_video(directory, f"v{i:04d}", duration_sec=duration, fps=fps, gold_interval=gold,
                         query=query, plant=plant, embedder=embedder, seed=seed * 100_003 + i,
                         payload_size=payload_size)
        entry = {
            "id": f"v{i:04d}",
            "archive": vid.archive.name,
            "sidecar": vid.sidecar.name,
            "query": query,
            "gold_answer": "B",
            "gold_interval": list(gold),
            "plant": plant,
        }
        if backend == "scripted":
            entry["script"] = scripted_steps(rng, 0.5 * (gold[0] + gold[1]))
        entries.append(entry)
    path = directory / "manifest.json"
    path.write_text(json.dumps(entries, indent=1))
    return path
