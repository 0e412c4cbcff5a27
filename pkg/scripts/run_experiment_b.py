#!/usr/bin/env python3
"""Experiment B analogue: one training image per class, 5000 iterations,
then refinement toward one region per class on every test mosaic.

Usage: python scripts/run_experiment_b.py [--out DIR] [--seed N]
"""

import argparse
import sys
from pathlib import Path

from texseg.cli import main as cli
from texseg.labelio import read_labels
from texseg.metrics import evaluate_suite


def run(out: Path, seed: int) -> int:
    data = out / "dataset"
    rc = cli(["generate", "--classes", "5", "--train-per-class", "1",
              "--test-mosaics", "20", "--extents", "96x96",
              "--regions", "2..3", "--seed", str(seed), "--out", str(data)])
    if rc:
        return rc
    run_dir = out / "train"
    rc = cli(["train", "--dataset", str(data), "--experiment", "B",
              "--seed", "1", "--out", str(run_dir)])
    if rc:
        return rc
    preds_nr, preds_r, gts = [], [], []
    for image in sorted((data / "test").glob("mosaic_*[0-9].pgm")):
        plain = out / "seg_nr" / image.stem
        cli(["segment", "--checkpoint", str(run_dir / "model.ckpt"),
             "--image", str(image), "--out", str(plain)])
        refined = out / "seg" / image.stem
        cli(["segment", "--checkpoint", str(run_dir / "model.ckpt"),
             "--image", str(image), "--refine", "--out", str(refined)])
        preds_nr.append(read_labels(plain / "labels.pgm"))
        preds_r.append(read_labels(refined / "labels.pgm"))
        gts.append(read_labels(image.with_name(image.stem + "_gt.pgm")))
    rep_nr = evaluate_suite(preds_nr, gts, "identity")
    rep_r = evaluate_suite(preds_r, gts, "identity")
    (out / "report_no_refine.txt").write_text(rep_nr.to_table())
    (out / "report_refined.txt").write_text(rep_r.to_table())
    print("without refinement:")
    print(rep_nr.to_table())
    print("with refinement:")
    print(rep_r.to_table())
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/experiment_b")
    ap.add_argument("--seed", type=int, default=31)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sys.exit(run(out, args.seed))
