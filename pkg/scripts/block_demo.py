#!/usr/bin/env python3
"""End-to-end demo: synthesize a survey block and run the full pipeline.

Equivalent to chaining the `aerotri synth` and `aerotri run` commands;
prints the evaluation report at the end.

Usage:
    python3 scripts/block_demo.py --out results/demo [--strips 4] [--noise 0.3]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from aerotri.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/demo")
    ap.add_argument("--strips", type=int, default=4)
    ap.add_argument("--images-per-strip", type=int, default=6)
    ap.add_argument("--noise", type=float, default=0.3,
                    help="keypoint noise sigma in pixels")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    out = Path(args.out)
    data = out / "data"
    code = cli_main(["synth", "--out", str(data),
                     "--strips", str(args.strips),
                     "--images-per-strip", str(args.images_per_strip),
                     "--keypoint-sigma", str(args.noise),
                     "--seed", str(args.seed)])
    if code:
        return code
    code = cli_main(["run", "--features", str(data / "features"),
                     "--pos", str(data / "pos.csv"),
                     "--camera", str(data / "camera.json"),
                     "--out", str(out / "run"), "--mode", "priors",
                     "--checkpoint", str(data / "checkpoint.json"),
                     "--seed", str(args.seed)])
    if code:
        return code
    print()
    print((out / "run" / "report.csv").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
