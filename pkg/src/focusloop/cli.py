"""Command-line entry point: ``focusloop {run,bench,pack,inspect,footprint}``.

Exit codes: 0 success, 1 per-entry failures, 2 configuration/format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from hashlib import sha256
from pathlib import Path

import numpy as np

from .archive import ArchiveFormatError, ArchiveReader, write_archive, write_embedding_sidecar
from .backends import BackendError, HttpAnswerModel, MockEmbedder, PlantedEvidenceModel, ScriptedAnswerModel
from .evidence import EvidenceError, PipelineConfig
from .pipeline import (
    IO_MODES,
    MODES,
    ManifestEntry,
    ManifestError,
    PipelineError,
    footprint_comparison,
    format_footprint,
    load_manifest,
    run_entry,
    run_sweep,
)

EXIT_OK, EXIT_ENTRY_FAILURES, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


def config_from_args(args, delta_w: float | None = None) -> PipelineConfig:
    kw = {}
    for name in ("k_base", "alpha", "lambda_d", "tau_global", "beta", "n_max", "tokens_per_frame",
                 "cot_rounds", "dense_cap"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if args.seed is not None:
        kw["rng_seed"] = args.seed
    if args.tau is not None:
        kw["tau"] = args.tau
        kw["gamma0"] = math.log(args.tau)
    if args.gamma0 is not None:
        kw["gamma0"] = args.gamma0
    dw = delta_w if delta_w is not None else (args.delta_w[0] if args.delta_w else None)
    if dw is not None:
        kw["delta_w_sec"] = dw
    if getattr(args, "no_attention", False):
        kw["want_attention"] = False
    return PipelineConfig(**kw)


def make_model_factory(kind: str, config: PipelineConfig, endpoint: str | None = None, seed: int = 0):
    if kind == "scripted":
        def factory(entry: ManifestEntry, index: int):
            if entry.script is None:
                raise ConfigError(f"entry {entry.id} has no script for the scripted backend")
            return ScriptedAnswerModel(entry.script)
    elif kind == "planted":
        def factory(entry: ManifestEntry, index: int):
            if entry.gold_interval is None:
                raise ConfigError(f"entry {entry.id} has no gold_interval for the planted backend")
            return PlantedEvidenceModel(entry.gold_interval, entry.gold_answer or "", seed=seed * 1_000_003 + index)
    elif kind == "http":
        shared = HttpAnswerModel(endpoint, config)

        def factory(entry: ManifestEntry, index: int):
            return shared
    else:
        raise ConfigError(f"unknown backend {kind!r}")
    return factory


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline config")
    g.add_argument("--k-base", dest="k_base", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--lambda-d", dest="lambda_d", type=float)
    g.add_argument("--tau-global", dest="tau_global", type=float)
    g.add_argument("--tau", type=float, help="probability threshold; sets gamma0 = ln(tau)")
    g.add_argument("--gamma0", type=float, help="log-domain threshold (overrides --tau)")
    g.add_argument("--beta", type=float)
    g.add_argument("--delta-w", dest="delta_w", type=float, nargs="+")
    g.add_argument("--n-max", dest="n_max", type=int)
    g.add_argument("--tokens-per-frame", dest="tokens_per_frame", type=int)
    g.add_argument("--cot-rounds", dest="cot_rounds", type=int)
    g.add_argument("--dense-cap", dest="dense_cap", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--no-attention", action="store_true")
    b = p.add_argument_group("backends")
    b.add_argument("--backend", choices=["scripted", "planted", "http"], default="planted")
    b.add_argument("--backend-endpoint")
    b.add_argument("--embed-dim", type=int, default=64)
    b.add_argument("--embed-seed", type=int, default=0)
    p.add_argument("--io", choices=IO_MODES, default="zero-cache")
    p.add_argument("--trace", help="write line-delimited JSON traces here ('-' for stdout)")
    p.add_argument("--hash-payloads", action="store_true")


def _open_trace(path):
    if path is None:
        return None
    if path == "-":
        return sys.stdout
    return open(path, "w")


def cmd_run(args) -> int:
    if args.delta_w and len(args.delta_w) > 1:
        raise ConfigError("run takes a single --delta-w")
    config = config_from_args(args)
    script = json.loads(Path(args.script).read_text()) if args.script else None
    gi = tuple(args.gold_interval) if args.gold_interval else None
    entry = ManifestEntry(Path(args.archive), Path(args.sidecar), args.query, args.gold_answer, gi, script, "run")
    factory = make_model_factory(args.backend, config, args.backend_endpoint, config.rng_seed)
    embedder = MockEmbedder(args.embed_dim, args.embed_seed)
    res = run_entry(0, entry, config, embedder, factory, args.mode, args.io, args.hash_payloads)
    out = _open_trace(args.trace)
    if out is not None:
        out.write(json.dumps(res.to_json()) + "\n")
        if out is not sys.stdout:
            out.close()
    if not res.ok:
        print(f"error: {res.error}", file=sys.stderr)
        return EXIT_ENTRY_FAILURES
    if args.trace != "-":
        f = res.trace["final"]
        print(f["answer"])
        print(f"accepted_by={f['accepted_by']} rounds={f['rounds_used']} frames={f['total_frames']} "
              f"tokens={f['total_visual_tokens']} payload_bytes={f['payload_bytes']}", file=sys.stderr)
    return EXIT_OK


SUMMARY_COLUMNS = ["mode", "delta_w", "entries", "failed", "mean_frames", "mean_tokens", "mean_rounds",
                   "trigger_rate", "accuracy", "mean_iou", "window_hit_rate"]


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def cmd_bench(args) -> int:
    entries = load_manifest(args.manifest)
    base = config_from_args(args, delta_w=1.5)
    delta_ws = args.delta_w or [base.delta_w_sec]
    factory = make_model_factory(args.backend, base, args.backend_endpoint, base.rng_seed)
    embedder = MockEmbedder(args.embed_dim, args.embed_seed)
    reports = run_sweep(entries, base, embedder, factory, args.mode, delta_ws,
                        io=args.io, workers=args.workers, hash_payloads=args.hash_payloads)

    out = _open_trace(args.trace)
    if out is not None:
        for rep in reports:
            for r in rep.results:
                line = {"setting": {"mode": rep.mode, "delta_w": rep.config.delta_w_sec}, **r.to_json()}
                out.write(json.dumps(line) + "\n")
        if out is not sys.stdout:
            out.close()

    rows = [rep.summary() for rep in reports]
    payload = {"rows": rows}
    footprints = []
    by = {(r["mode"], r["delta_w"]): r for r in rows}
    for dw in delta_ws:
        dense = by.get(("dense_oracle", dw))
        ada = by.get(("adafocus", dw))
        if dense and ada and dense["mean_frames"] and ada["mean_frames"]:
            cmp = footprint_comparison(dense["mean_frames"], ada["mean_frames"], base.tokens_per_frame)
            footprints.append({"delta_w": dw, **cmp})
    if footprints:
        payload["footprint"] = footprints
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    stream = sys.stderr if args.trace == "-" else sys.stdout
    print("\t".join(SUMMARY_COLUMNS), file=stream)
    for row in rows:
        print("\t".join(_fmt(row[c]) for c in SUMMARY_COLUMNS), file=stream)
    for fp in footprints:
        print(f"\n[delta_w={fp['delta_w']}]\n" + format_footprint(fp), file=stream)
    return EXIT_ENTRY_FAILURES if any(r["failed"] for r in rows) else EXIT_OK


def cmd_pack(args) -> int:
    src = Path(args.frame_dir)
    if not src.is_dir():
        raise ConfigError(f"{src} is not a directory")
    files = sorted(p for p in src.iterdir() if p.is_file() and not p.name.startswith("."))
    if not files:
        raise ConfigError(f"no frame files in {src}")
    fps_millis = int(round(args.fps * 1000))
    payloads = [p.read_bytes() for p in files]
    times = [int(round(i * 1_000_000 / fps_millis)) for i in range(len(files))]
    out = Path(args.out)
    arch, side = out.with_suffix(".fafv"), out.with_suffix(".faem")
    write_archive(list(zip(times, payloads)), fps_millis, arch)
    if args.embeddings:
        emb = np.load(args.embeddings)
        if emb.ndim != 2 or emb.shape[0] != len(files):
            raise ConfigError(f"embeddings shape {emb.shape} does not match {len(files)} frames")
        vecs = list(emb)
    else:
        embedder = MockEmbedder(args.embed_dim, args.embed_seed)
        vecs = [embedder.embed_frame(p).values for p in payloads]
    write_embedding_sidecar(zip(times, vecs), side)
    print(json.dumps({"archive": str(arch), "sidecar": str(side), "frames": len(files),
                      "fps_millis": fps_millis}))
    return EXIT_OK


def cmd_inspect(args) -> int:
    with ArchiveReader(args.archive) as r:
        h = r.header
        doc = {
            "path": str(r.path),
            "file_size": r.file_size,
            "header": {"magic": h.magic.decode("ascii"), "frame_count": h.frame_count,
                       "fps_millis": h.fps_millis, "duration_ms": h.duration_ms,
                       "index_offset": h.index_offset},
        }
        if not args.header_only:
            frames = []
            payloads = r.read_frames(r.frames) if args.hashes else None
            for i, e in enumerate(r.index):
                d = {"index": i, "timestamp_ms": e.timestamp_ms, "payload_offset": e.payload_offset,
                     "payload_len": e.payload_len}
                if payloads is not None:
                    d["sha256"] = sha256(payloads[i]).hexdigest()
                frames.append(d)
            doc["frames"] = frames
        doc["bytes_read"] = r.accounting.bytes_read
    print(json.dumps(doc, indent=None if args.compact else 1))
    return EXIT_OK


def cmd_footprint(args) -> int:
    cmp = footprint_comparison(args.dense_frames, args.adaptive_frames, args.tokens_per_frame)
    print(format_footprint(cmp))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="focusloop", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="answer one query over one archive")
    r.add_argument("archive")
    r.add_argument("sidecar")
    r.add_argument("--query", required=True)
    r.add_argument("--mode", choices=MODES, default="adafocus")
    r.add_argument("--script", help="JSON list of steps for the scripted backend")
    r.add_argument("--gold-answer")
    r.add_argument("--gold-interval", type=float, nargs=2)
    _add_config_flags(r)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run a manifest over modes x window widths")
    b.add_argument("manifest")
    b.add_argument("--mode", choices=MODES, nargs="+", default=["adafocus"])
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--report", help="write the summary rows as JSON here")
    _add_config_flags(b)
    b.set_defaults(func=cmd_bench)

    k = sub.add_parser("pack", help="build archive + sidecar from a directory of frame files")
    k.add_argument("frame_dir")
    k.add_argument("out", help="output prefix; writes <out>.fafv and <out>.faem")
    k.add_argument("--fps", type=float, default=1.0)
    k.add_argument("--embeddings", help=".npy array (n_frames, dim); default: mock embedder")
    k.add_argument("--embed-dim", type=int, default=64)
    k.add_argument("--embed-seed", type=int, default=0)
    k.set_defaults(func=cmd_pack)

    i = sub.add_parser("inspect", help="dump archive header and index as JSON")
    i.add_argument("archive")
    i.add_argument("--hashes", action="store_true", help="include sha256 of every payload")
    i.add_argument("--header-only", action="store_true")
    i.add_argument("--compact", action="store_true")
    i.set_defaults(func=cmd_inspect)

    f = sub.add_parser("footprint", help="visual-token footprint comparison")
    f.add_argument("--dense-frames", type=float, required=True)
    f.add_argument("--adaptive-frames", type=float, required=True)
    f.add_argument("--tokens-per-frame", type=int, default=256)
    f.set_defaults(func=cmd_footprint)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ManifestError, ArchiveFormatError, EvidenceError, PipelineError,
            BackendError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
