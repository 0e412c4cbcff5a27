#!/usr/bin/env python3
"""Experiment A analogue: multi-image supervised training on non-segmented
texture images, evaluated on held-out mosaics.

Usage: python scripts/run_experiment_a.py [--out DIR] [--seed N]
"""

import argparse
import sys
from pathlib import Path

from texseg.cli import main as cli


def run(out: Path, seed: int) -> int:
    data = out / "dataset"
    rc = cli(["generate", "--classes", "5", "--train-per-class", "8",
              "--test-mosaics", "20", "--extents", "96x96",
              "--regions", "2..3", "--seed", str(seed), "--out", str(data)])
    if rc:
        return rc
    run_dir = out / "train"
    rc = cli(["train", "--dataset", str(data), "--experiment", "A",
              "--seed", "1", "--out", str(run_dir)])
    if rc:
        return rc
    pred = out / "pred"
    pred.mkdir(exist_ok=True)
    for image in sorted((data / "test").glob("mosaic_*[0-9].pgm")):
        seg = out / "seg" / image.stem
        rc = cli(["segment", "--checkpoint", str(run_dir / "model.ckpt"),
                  "--image", str(image), "--out", str(seg)])
        if rc:
            return rc
        (pred / image.name).write_bytes((seg / "labels.pgm").read_bytes())
    gt = out / "gt"
    gt.mkdir(exist_ok=True)
    for g in (data / "test").glob("*_gt.pgm"):
        (gt / g.name).write_bytes(g.read_bytes())
    return cli(["eval", "--pred", str(pred), "--gt", str(gt),
                "--matching", "identity", "--out", str(out / "report")])


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/experiment_a")
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sys.exit(run(out, args.seed))
