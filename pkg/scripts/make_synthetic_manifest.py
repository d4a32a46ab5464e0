"""Write a synthetic manifest (archives, sidecars, manifest.json) to a directory."""

import argparse

from focusloop.synth import make_manifest


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--entries", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--backend", choices=["planted", "scripted"], default="planted")
    ap.add_argument("--min-duration", type=float, default=60)
    ap.add_argument("--max-duration", type=float, default=600)
    args = ap.parse_args()
    path = make_manifest(args.out_dir, args.entries, seed=args.seed, backend=args.backend,
                         durations=(args.min_duration, args.max_duration))
    print(path)


if __name__ == "__main__":
    main()
