#!/usr/bin/env python3
"""Experiment C analogue: k-means pre-segmentation from a pre-trained bank
network, early-stopped fine-tuning on each test image, refinement, and a
comparison of final CO against the raw pre-segmentation CO.

Usage: python scripts/run_experiment_c.py [--out DIR] [--bank CKPT]
A bank checkpoint is trained first when none is supplied.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from texseg.cli import main as cli
from texseg.labelio import read_image, read_labels
from texseg.metrics import match_labels, pixel_measures


def run(out: Path, bank: str | None, seed: int) -> int:
    if bank is None:
        data = out / "bank_dataset"
        cli(["generate", "--classes", "5", "--train-per-class", "8",
             "--test-mosaics", "0", "--extents", "96x96",
             "--seed", str(seed), "--out", str(data)])
        cli(["train", "--dataset", str(data), "--experiment", "A",
             "--seed", "1", "--out", str(out / "bank")])
        bank = str(out / "bank" / "model.ckpt")
    test = out / "test_images"
    cli(["generate", "--classes", "5", "--train-per-class", "0",
         "--test-mosaics", "10", "--extents", "80x80", "--regions", "2..3",
         "--seed", str(seed + 1), "--out", str(test)])
    improved = 0
    rows = []
    for image in sorted((test / "test").glob("mosaic_*[0-9].pgm")):
        gt = read_labels(image.with_name(image.stem + "_gt.pgm"))
        k = len(np.unique(gt))
        run_dir = out / "unsup" / image.stem
        rc = cli(["unsup", "--image", str(image), "--preseg", "kmeans",
                  "--bank", bank, "--k", str(k), "--seed", "3",
                  "--out", str(run_dir)])
        if rc:
            return rc
        raw = read_labels(run_dir / "preseg_raw.pgm")
        final = read_labels(run_dir / "labels.pgm")
        co_raw, _ = pixel_measures(match_labels(raw, gt), gt)
        co_final, _ = pixel_measures(match_labels(final, gt), gt)
        improved += co_final >= co_raw
        rows.append(f"{image.stem}: preseg CO {co_raw:.2f} -> final CO "
                    f"{co_final:.2f}")
    summary = "\n".join(rows) + f"\nimproved on {improved}/{len(rows)} images\n"
    (out / "summary.txt").write_text(summary)
    print(summary)
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/experiment_c")
    ap.add_argument("--bank", default=None)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sys.exit(run(out, args.bank, args.seed))
