"""Targeted retrieval vs. uniformly random windows on a planted manifest.

Both arms share the preview, the gate and the round budget; only the window
centre differs. Reports how often any retrieved window touches the gold span.
"""

import argparse
import tempfile
from pathlib import Path

from focusloop.backends import MockEmbedder, ScriptedAnswerModel
from focusloop.evidence import PipelineConfig
from focusloop.pipeline import run_dataset
from focusloop.synth import make_manifest


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entries", type=int, default=200)
    ap.add_argument("--seed", type=int, default=9)
    ap.add_argument("--delta-w", type=float, default=1.5)
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    cfg = PipelineConfig(rng_seed=args.seed, delta_w_sec=args.delta_w)
    emb = MockEmbedder()
    with tempfile.TemporaryDirectory() as tmp:
        manifest = make_manifest(Path(tmp), args.entries, seed=args.seed, backend="scripted",
                                 durations=(60, 240), payload_size=32)
        rows = []
        for mode in ("adafocus", "random_retrieval"):
            rep = run_dataset(manifest, cfg, emb, lambda e, i: ScriptedAnswerModel(e.script), mode,
                              workers=args.workers)
            rows.append(rep.summary())
    print("mode\twindow_hit_rate\tmean_iou\tmean_frames\tmean_rounds")
    for r in rows:
        print(f"{r['mode']}\t{r['window_hit_rate']:.3f}\t{r['mean_iou']:.3f}\t"
              f"{r['mean_frames']:.1f}\t{r['mean_rounds']:.2f}")


if __name__ == "__main__":
    main()
