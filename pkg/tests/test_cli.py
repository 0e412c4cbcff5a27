"""End-to-end CLI pipeline: generate, train, segment, unsup, eval."""

import hashlib

import numpy as np
import pytest

from texseg.cli import main
from texseg.errors import EXIT_IO, EXIT_OK, EXIT_VALIDATION
from texseg.labelio import read_labels, write_labels


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny generate+train pipeline shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    rc = main(["generate", "--classes", "2", "--train-per-class", "2",
               "--test-mosaics", "2", "--extents", "64x64", "--regions", "2",
               "--seed", "3", "--out", str(data)])
    assert rc == EXIT_OK
    run = root / "run"
    rc = main(["train", "--dataset", str(data), "--iters", "30",
               "--seed", "1", "--out", str(run)])
    assert rc == EXIT_OK
    return root, data, run


class TestGenerate:
    def test_counts(self, tmp_path):
        rc = main(["generate", "--classes", "3", "--train-per-class", "2",
                   "--test-mosaics", "4", "--extents", "64x64",
                   "--regions", "2..3", "--seed", "5",
                   "--out", str(tmp_path / "d")])
        assert rc == EXIT_OK
        train = list((tmp_path / "d" / "train").glob("*.pgm"))
        test = list((tmp_path / "d" / "test").glob("*.pgm"))
        assert len(train) == 6
        assert len(test) == 8  # mosaics plus ground-truth maps

    def test_rerun_byte_identical(self, tmp_path):
        args = ["generate", "--classes", "2", "--train-per-class", "1",
                "--test-mosaics", "1", "--extents", "64x64",
                "--regions", "2", "--seed", "7"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b")])
        for p in sorted((tmp_path / "a").rglob("*.pgm")):
            q = tmp_path / "b" / p.relative_to(tmp_path / "a")
            assert p.read_bytes() == q.read_bytes()

    def test_nonpaper_regions_rejected_without_flag(self, tmp_path):
        rc = main(["generate", "--classes", "9", "--regions", "6..9",
                   "--out", str(tmp_path / "x")])
        assert rc == EXIT_VALIDATION
        rc = main(["generate", "--classes", "9", "--regions", "6..9",
                   "--allow-nonpaper", "--train-per-class", "1",
                   "--test-mosaics", "1", "--extents", "64x64",
                   "--out", str(tmp_path / "y")])
        assert rc == EXIT_OK


class TestTrain:
    def test_outputs_exist(self, pipeline):
        _, _, run = pipeline
        assert (run / "model.ckpt").exists()
        assert (run / "loss_trace.csv").exists()
        manifest = (run / "manifest.txt").read_text()
        assert "command=train" in manifest
        assert "sha256" in manifest

    def test_missing_dataset_io_error(self, tmp_path):
        rc = main(["train", "--dataset", str(tmp_path / "nope"),
                   "--iters", "1", "--out", str(tmp_path / "r")])
        assert rc == EXIT_IO

    def test_experiment_b_preset_budget(self, pipeline, capsys):
        # preset only: resolves to 5000 iterations without running them here
        from texseg.cli import EXPERIMENT_ITERS
        assert EXPERIMENT_ITERS["B"] == 5000
        assert EXPERIMENT_ITERS["A"] == 2000


class TestSegment:
    def test_labels_and_overlay(self, pipeline, tmp_path):
        root, data, run = pipeline
        image = next((data / "test").glob("mosaic_*[0-9].pgm"))
        out = tmp_path / "seg"
        rc = main(["segment", "--checkpoint", str(run / "model.ckpt"),
                   "--image", str(image), "--out", str(out)])
        assert rc == EXIT_OK
        labels = read_labels(out / "labels.pgm")
        assert labels.shape == (64, 64)
        assert (out / "overlay.png").exists()

    def test_refine_gives_n_patches(self, pipeline, tmp_path):
        from scipy import ndimage
        from texseg.refine import FOUR_CONN
        root, data, run = pipeline
        image = next((data / "test").glob("mosaic_*[0-9].pgm"))
        out = tmp_path / "seg_r"
        rc = main(["segment", "--checkpoint", str(run / "model.ckpt"),
                   "--image", str(image), "--refine", "--out", str(out)])
        assert rc == EXIT_OK
        labels = read_labels(out / "labels.pgm")
        report = (out / "refine_report.txt").read_text()
        if "forced=0" in report:
            total = 0
            for cls in np.unique(labels):
                _, n = ndimage.label(labels == cls, structure=FOUR_CONN)
                total += n
            assert total == 2

    def test_without_refine_equals_argmax(self, pipeline, tmp_path):
        from texseg.model import load_state
        from texseg.train import infer_full
        from texseg.labelio import read_image
        root, data, run = pipeline
        image_path = next((data / "test").glob("mosaic_*[0-9].pgm"))
        out = tmp_path / "seg_plain"
        main(["segment", "--checkpoint", str(run / "model.ckpt"),
              "--image", str(image_path), "--out", str(out)])
        state = load_state(run / "model.ckpt")
        _, want = infer_full(state, read_image(image_path))
        assert np.array_equal(read_labels(out / "labels.pgm"), want)

    def test_mismatched_classes_rejected(self, pipeline, tmp_path):
        root, data, run = pipeline
        image = next((data / "test").glob("mosaic_*[0-9].pgm"))
        rc = main(["segment", "--checkpoint", str(run / "model.ckpt"),
                   "--image", str(image), "--classes", "9",
                   "--out", str(tmp_path / "bad")])
        assert rc == EXIT_IO  # checkpoint mismatch is a file-contract error


class TestUnsup:
    def test_external_preseg_path(self, pipeline, tmp_path):
        root, data, run = pipeline
        image = next((data / "test").glob("mosaic_*[0-9].pgm"))
        gt = read_labels(image.with_name(image.stem + "_gt.pgm"))
        pre = tmp_path / "external_preseg.pgm"
        write_labels(pre, gt)  # external algorithm output stand-in
        out = tmp_path / "unsup"
        rc = main(["unsup", "--image", str(image),
                   "--preseg", f"file:{pre}", "--cap", "8", "--grace", "5",
                   "--check-every", "4", "--border-radius", "1",
                   "--seed", "2", "--out", str(out)])
        assert rc == EXIT_OK
        assert (out / "labels.pgm").exists()
        stop = (out / "stop_report.txt").read_text()
        assert "stop_iter=" in stop and "cause=" in stop

    def test_single_class_preseg_named_error(self, pipeline, tmp_path, capsys):
        root, data, run = pipeline
        image = next((data / "test").glob("mosaic_*[0-9].pgm"))
        pre = tmp_path / "flat.pgm"
        write_labels(pre, np.zeros((64, 64), dtype=np.uint8))
        rc = main(["unsup", "--image", str(image), "--preseg", f"file:{pre}",
                   "--out", str(tmp_path / "u2")])
        assert rc == EXIT_IO
        assert "class" in capsys.readouterr().err

    def test_kmeans_requires_bank(self, pipeline, tmp_path, capsys):
        root, data, run = pipeline
        image = next((data / "test").glob("mosaic_*[0-9].pgm"))
        rc = main(["unsup", "--image", str(image), "--preseg", "kmeans",
                   "--out", str(tmp_path / "u3")])
        assert rc == EXIT_VALIDATION

    def test_kmeans_path_stops_before_cap(self, trained_pair, tmp_path):
        from texseg.mosaic import MosaicSpec, compose_mosaic
        from texseg.model import save_state
        from texseg.labelio import write_image
        bank, state, _ = trained_pair
        ckpt = tmp_path / "bank.ckpt"
        save_state(state, ckpt)
        spec = MosaicSpec((96, 96), 2, "hstrips", (0, 1), 909)
        img, _ = compose_mosaic(spec, bank)
        image_path = tmp_path / "mosaic.pgm"
        write_image(image_path, img)
        out = tmp_path / "unsup_kmeans"
        rc = main(["unsup", "--image", str(image_path), "--preseg", "kmeans",
                   "--bank", str(ckpt), "--k", "2", "--downsample", "2",
                   "--check-every", "2", "--seed", "4", "--out", str(out)])
        assert rc == EXIT_OK
        stop = dict(line.split("=", 1) for line in
                    (out / "stop_report.txt").read_text().splitlines())
        assert int(stop["stop_iter"]) < 400
        assert stop["cause"] == "grace"


class TestEval:
    def test_identical_dirs_perfect(self, pipeline, tmp_path):
        root, data, run = pipeline
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        for g in (data / "test").glob("*_gt.pgm"):
            labels = read_labels(g)
            write_labels(pred / g.name.replace("_gt", ""), labels)
            write_labels(gt / g.name, labels)
        out = tmp_path / "report"
        rc = main(["eval", "--pred", str(pred), "--gt", str(gt),
                   "--out", str(out)])
        assert rc == EXIT_OK
        text = (out / "report.kv").read_text()
        assert "CO=100.000000" in text
        assert "GCE=0.000000" in text
        table = (out / "report.txt").read_text()
        assert "↑ CS" in table and "↓ GCE" in table

    def test_mismatched_sets_listed_and_aborted(self, pipeline, tmp_path,
                                                capsys):
        pred = tmp_path / "p"
        gt = tmp_path / "g"
        pred.mkdir()
        gt.mkdir()
        write_labels(pred / "a.pgm", np.zeros((8, 8), dtype=np.uint8))
        write_labels(gt / "b_gt.pgm", np.zeros((8, 8), dtype=np.uint8))
        rc = main(["eval", "--pred", str(pred), "--gt", str(gt),
                   "--out", str(tmp_path / "r")])
        assert rc == EXIT_IO
        err = capsys.readouterr().err
        assert "a" in err and "b" in err


class TestManifestReproducibility:
    def test_train_rerun_reproduces_checksums(self, pipeline, tmp_path):
        root, data, run = pipeline
        rerun = tmp_path / "rerun"
        rc = main(["train", "--dataset", str(data), "--iters", "30",
                   "--seed", "1", "--out", str(rerun)])
        assert rc == EXIT_OK
        assert sha(run / "model.ckpt") == sha(rerun / "model.ckpt")
        assert sha(run / "loss_trace.csv") == sha(rerun / "loss_trace.csv")
