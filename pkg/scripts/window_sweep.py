"""Evidence size and refinement rate across retrieval half-widths.

Builds a fixed-seed synthetic manifest, runs ``focusloop bench`` over several
half-widths with the planted backend and prints the summary table.
``--golden`` writes the rounded rows used by the acceptance suite.
"""

import argparse
import json
import tempfile
from pathlib import Path

from focusloop.cli import main as cli_main
from focusloop.synth import make_manifest

KEEP = ("mode", "delta_w", "entries", "failed", "mean_frames", "trigger_rate", "mean_rounds", "accuracy")


def reduce_rows(rows):
    return [{k: (round(r[k], 6) if isinstance(r[k], float) else r[k]) for k in KEEP} for r in rows]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entries", type=int, default=24)
    ap.add_argument("--seed", type=int, default=8)
    ap.add_argument("--delta-w", type=float, nargs="+", default=[0.5, 1.5, 2.5])
    ap.add_argument("--golden", help="write reduced rows here")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        manifest = make_manifest(Path(tmp) / "m", args.entries, seed=args.seed, backend="planted",
                                 durations=(60, 300))
        report = Path(tmp) / "report.json"
        code = cli_main(["bench", str(manifest), "--backend", "planted", "--mode", "adafocus",
                         "--delta-w", *map(str, args.delta_w), "--seed", "0", "--report", str(report)])
        rows = json.loads(report.read_text())["rows"]
    if args.golden:
        Path(args.golden).parent.mkdir(parents=True, exist_ok=True)
        Path(args.golden).write_text(json.dumps(reduce_rows(rows), indent=1) + "\n")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
