"""Visual-token cost of dense sampling vs. the adaptive loop on one manifest."""

import argparse
import tempfile
from pathlib import Path

from focusloop.backends import MockEmbedder, PlantedEvidenceModel
from focusloop.evidence import PipelineConfig
from focusloop.pipeline import footprint_comparison, format_footprint, run_dataset
from focusloop.synth import make_manifest


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--entries", type=int, default=16)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--tokens-per-frame", type=int, default=256)
    args = ap.parse_args()

    cfg = PipelineConfig(tokens_per_frame=args.tokens_per_frame, rng_seed=args.seed)

    def factory(entry, i):
        return PlantedEvidenceModel(entry.gold_interval, entry.gold_answer, seed=args.seed * 1000 + i)

    with tempfile.TemporaryDirectory() as tmp:
        manifest = make_manifest(Path(tmp), args.entries, seed=args.seed)
        dense = run_dataset(manifest, cfg, MockEmbedder(), factory, "dense_oracle").summary()
        ada = run_dataset(manifest, cfg, MockEmbedder(), factory, "adafocus").summary()
    print(format_footprint(footprint_comparison(dense["mean_frames"], ada["mean_frames"],
                                                args.tokens_per_frame)))
    print(f"accuracy dense={dense['accuracy']:.3f} adaptive={ada['accuracy']:.3f}")


if __name__ == "__main__":
    main()
