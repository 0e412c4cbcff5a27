"""Image and label-map file I/O.

Images are 8-bit grayscale PGM (binary P5) or PNG; label images use the
palette convention class i -> gray level i, ignore -> 255. PGM writing is
byte-deterministic and is the default output format.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError
from .tensor import IGNORE_LABEL


def _write_pgm(path: Path, data: np.ndarray) -> None:
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(data, dtype=np.uint8).tobytes())


def _read_pgm(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if not blob.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval; '#' comments allowed
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    if len(blob) - pos < h * w:
        raise DataError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=pos)
    return pixels.reshape(h, w).copy()


def write_image(path, image: np.ndarray) -> None:
    """Save a float image in [0, 1] (or a uint8 array) as PGM or PNG."""
    path = Path(path)
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if path.suffix.lower() == ".png":
        from PIL import Image
        Image.fromarray(arr, mode="L").save(path)
    else:
        _write_pgm(path, arr)


def read_image(path) -> np.ndarray:
    """Load a grayscale image as float64 in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        raw = _read_pgm(path)
    else:
        from PIL import Image
        with Image.open(path) as im:
            raw = np.asarray(im.convert("L"))
    return raw.astype(np.float64) / 255.0


def write_labels(path, labels: np.ndarray) -> None:
    """Save a label map using the gray-level palette."""
    path = Path(path)
    arr = np.asarray(labels, dtype=np.uint8)
    if path.suffix.lower() == ".png":
        from PIL import Image
        Image.fromarray(arr, mode="L").save(path)
    else:
        _write_pgm(path, arr)


def read_labels(path, expect_shape: tuple[int, int] | None = None,
                max_classes: int | None = None) -> np.ndarray:
    """Load an indexed label image; validates extents and palette."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        raw = _read_pgm(path)
    else:
        from PIL import Image
        with Image.open(path) as im:
            if im.mode not in ("L", "P", "I;16", "I"):
                raise DataError(
                    f"{path}: label image must be single-channel, got {im.mode}")
            raw = np.asarray(im.convert("L"))
    labels = raw.astype(np.uint8)
    if expect_shape is not None and labels.shape != tuple(expect_shape):
        raise DataError(f"{path}: extents {labels.shape} do not match "
                        f"expected {tuple(expect_shape)}")
    if max_classes is not None:
        bad = np.unique(labels[(labels >= max_classes)
                               & (labels != IGNORE_LABEL)])
        if bad.size:
            raise DataError(f"{path}: gray levels {bad.tolist()} outside the "
                            f"palette (classes < {max_classes}, ignore = "
                            f"{IGNORE_LABEL})")
    return labels


def render_overlay(path, image: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Write a PNG with label boundaries drawn in red over the input image.

    Returns the rendered RGB array (useful for checksum pinning).
    """
    from PIL import Image

    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    rgb = np.stack([arr, arr, arr], axis=-1)
    boundary = np.zeros(labels.shape, dtype=bool)
    boundary[:-1, :] |= labels[:-1, :] != labels[1:, :]
    boundary[1:, :] |= labels[:-1, :] != labels[1:, :]
    boundary[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    boundary[:, 1:] |= labels[:, :-1] != labels[:, 1:]
    rgb[boundary] = (255, 0, 0)
    Image.fromarray(rgb, mode="RGB").save(path)
    return rgb
