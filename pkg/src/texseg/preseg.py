"""Unsupervised pre-segmentation of a test image.

Pipeline: bilinear-downsample the image, run a pre-trained network, cluster
the per-pixel class-score vectors with k-means (known k), upsample the labels
back, then keep only the largest connected region per class with dilated
borders marked ignore. External pre-segmentation label maps are ingested
through the same cleaning path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError
from .labelio import read_labels
from .model import NetworkState
from .ops import resize_bilinear, resize_nearest_labels
from .refine import FOUR_CONN
from .tensor import IGNORE_LABEL
from .train import infer_full


@dataclass
class PresegConfig:
    k: int = 2
    downsample_factor: int = 4
    border_dilation_radius: int = 3
    kmeans_restarts: int = 5
    kmeans_max_iters: int = 100
    seed: int = 0
    features: str = "scores"      # "scores" or "softmax"

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.downsample_factor < 1:
            raise ConfigError("downsample_factor must be >= 1")
        if self.features not in ("scores", "softmax"):
            raise ConfigError("features must be 'scores' or 'softmax'")


def _kmeans_single(points: np.ndarray, k: int, max_iters: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
    n = points.shape[0]
    # k-means++ seeding
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = points[int(rng.integers(n))]
        else:
            probs = d2 / total
            centroids[i] = points[int(rng.choice(n, p=probs))]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))

    assign = np.full(n, -1)
    for _ in range(max_iters):
        dist = ((points[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        for j in range(k):
            sel = new_assign == j
            if sel.any():
                centroids[j] = points[sel].mean(axis=0)
            else:
                # empty cluster: reseed to the point farthest from its centroid
                far = int(np.argmax(dist[np.arange(n), new_assign]))
                centroids[j] = points[far]
                new_assign[far] = j
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    dist = ((points[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    assign = dist.argmin(axis=1)
    inertia = float(dist[np.arange(n), assign].sum())
    return assign, centroids, inertia


def kmeans(points: np.ndarray, k: int,
           config: PresegConfig) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding; best inertia over restarts.

    Deterministic given config.seed. Raises when there are fewer points than
    clusters.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ConfigError(f"points must be (n, d), got shape {points.shape}")
    n = points.shape[0]
    if n < k:
        raise ConfigError(f"{n} points cannot form {k} clusters")
    master = np.random.SeedSequence(config.seed)
    best = None
    for child in master.spawn(max(1, config.kmeans_restarts)):
        rng = np.random.default_rng(child)
        assign, cents, inertia = _kmeans_single(points, k,
                                                config.kmeans_max_iters, rng)
        if best is None or inertia < best[2]:
            best = (assign, cents, inertia)
    return best[0], best[1]


def kmeans_trace(points: np.ndarray, k: int, max_iters: int,
                 seed: int) -> list[float]:
    """Per-iteration inertia of a single Lloyd run (for diagnostics/tests)."""
    points = np.asarray(points, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = points.shape[0]
    centroids = points[rng.choice(n, size=k, replace=False)].copy()
    trace = []
    assign = None
    for _ in range(max_iters):
        dist = ((points[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        trace.append(float(dist[np.arange(n), new_assign].sum()))
        for j in range(k):
            sel = new_assign == j
            if sel.any():
                centroids[j] = points[sel].mean(axis=0)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return trace


def preseg_from_network(state: NetworkState, image: np.ndarray,
                        config: PresegConfig) -> np.ndarray:
    """Cluster the network's per-pixel score vectors on a downsampled image.

    The image is bilinear-downsampled by the configured factor, the score
    volume (one dimension per pre-trained class) is clustered to k labels,
    and the label image is nearest-neighbor-upsampled back to full extents.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[-2:]
    f = config.downsample_factor
    if f > 1:
        small = resize_bilinear(img, (max(1, h // f), max(1, w // f)))
    else:
        small = img
    scores, _ = infer_full(state, small)
    if config.features == "softmax":
        e = np.exp(scores - scores.max(axis=0, keepdims=True))
        scores = e / e.sum(axis=0, keepdims=True)
    c, sh, sw = scores.shape
    points = scores.reshape(c, -1).T
    assign, _ = kmeans(points, config.k, config)
    small_labels = assign.reshape(sh, sw).astype(np.uint8)
    if (sh, sw) == (h, w):
        return small_labels
    return resize_nearest_labels(small_labels, (h, w))


@dataclass
class PresegCleanResult:
    labels: np.ndarray            # cleaned map with ignore pixels
    kept_classes: tuple
    dropped_classes: tuple


def _clean_pass(labels: np.ndarray, config: PresegConfig) -> np.ndarray:
    out = np.full(labels.shape, IGNORE_LABEL, dtype=np.uint8)
    comps: dict[int, np.ndarray] = {}
    for cls in (int(v) for v in np.unique(labels) if v != IGNORE_LABEL):
        comp, n = ndimage.label(labels == cls, structure=FOUR_CONN)
        if n == 0:
            continue
        sizes = ndimage.sum_labels(np.ones_like(comp), comp,
                                   index=np.arange(1, n + 1))
        comps[cls] = comp == (1 + int(np.argmax(sizes)))
        out[comps[cls]] = cls
    # fill fully-enclosed holes, lowest class first; a hole is filled only
    # when it contains no other class's kept component and no pre-existing
    # ignore pixel (partial fills could disconnect the class)
    for cls in sorted(comps):
        bg, nbg = ndimage.label(~comps[cls], structure=FOUR_CONN)
        border_ids = set(np.unique(np.concatenate(
            [bg[0, :], bg[-1, :], bg[:, 0], bg[:, -1]])).tolist())
        eligible = (out == IGNORE_LABEL) & (labels != IGNORE_LABEL)
        for i in range(1, nbg + 1):
            if i in border_ids:
                continue
            hole = bg == i
            if eligible[hole].all():
                out[hole] = cls

    # Chebyshev border dilation: a kept pixel near any other class is ignored
    r = config.border_dilation_radius
    if r > 0:
        size = 2 * r + 1
        band = np.zeros(labels.shape, dtype=bool)
        for cls in sorted(comps):
            near = ndimage.maximum_filter((out == cls).astype(np.uint8),
                                          size=size).astype(bool)
            band |= near & (out != cls) & (out != IGNORE_LABEL)
        out[band] = IGNORE_LABEL
    return out


def preseg_clean(labels: np.ndarray,
                 config: PresegConfig) -> PresegCleanResult:
    """Keep only the largest 4-connected component per class, fill the regions
    it fully encloses, and ignore everything else plus a Chebyshev band of
    border_dilation_radius around inter-class boundaries.

    Enclosed isolated regions are filled with the enclosing class; regions
    touching the border or several classes become ignore. Pixels already
    carrying the ignore label are never relabeled to a class. The pass is
    iterated to a fixpoint (the dilation band can split a narrow component,
    re-exposing a largest-component choice), so the operation is idempotent.
    """
    cur = np.asarray(labels, dtype=np.uint8)
    in_classes = [int(v) for v in np.unique(cur) if v != IGNORE_LABEL]
    while True:
        nxt = _clean_pass(cur, config)
        if np.array_equal(nxt, cur):
            break
        cur = nxt
    kept = tuple(int(v) for v in np.unique(cur) if v != IGNORE_LABEL)
    dropped = tuple(c for c in in_classes if c not in kept)
    return PresegCleanResult(cur, kept, dropped)


def load_external_preseg(path, test_image: np.ndarray | None = None,
                         max_classes: int | None = None) -> np.ndarray:
    """Read an indexed label image (PGM/PNG, one class per gray level) and
    validate its extents against the test image."""
    expect = None
    if test_image is not None:
        expect = np.asarray(test_image).shape[-2:]
    labels = read_labels(path, expect_shape=expect, max_classes=max_classes)
    if labels.size == 0:
        raise DataError(f"{path}: empty label image")
    return labels
