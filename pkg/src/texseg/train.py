"""Training protocols: supervised (multi-image or one-per-class) and
unsupervised self-training on the test image with an early-stop rule.

Each iteration takes one random crop of one random sample (batch 1). Pixels
carrying the ignore label contribute nothing to loss or gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .model import (MIN_EXTENT, POOL_FACTOR, NetworkState, backward, forward,
                    predict_labels)
from .ops import softmax_xent_pixelwise
from .tensor import IGNORE_LABEL, Tensor, sgd_step


@dataclass
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    max_iters: int = 2000
    crop_size: int = 64
    seed: int = 0
    eval_every: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.crop_size < MIN_EXTENT or self.crop_size % POOL_FACTOR:
            raise ConfigError(
                f"crop_size must be a multiple of {POOL_FACTOR} and "
                f">= {MIN_EXTENT}, got {self.crop_size}")


@dataclass
class EarlyStopConfig:
    grace_iters: int = 60
    hard_cap: int = 400
    check_every: int = 1

    def __post_init__(self):
        if not 0 < self.grace_iters <= self.hard_cap:
            raise ConfigError("need 0 < grace_iters <= hard_cap")
        if self.check_every < 1:
            raise ConfigError("check_every must be >= 1")


@dataclass
class TrainSample:
    """One training image with its label map (possibly uniform)."""

    image: np.ndarray   # (H, W) or (C, H, W), float in [0, 1]
    labels: np.ndarray  # (H, W), class indices or IGNORE_LABEL

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        hw = self.image.shape[-2:]
        if self.labels.shape != hw:
            raise ShapeError("labels", hw, self.labels.shape)

    @classmethod
    def uniform(cls, image: np.ndarray, class_id: int) -> "TrainSample":
        """Non-segmented training image: the whole image carries one class."""
        hw = np.asarray(image).shape[-2:]
        return cls(image, np.full(hw, class_id, dtype=np.uint8))


@dataclass
class StopReport:
    trigger_iter: int | None
    stop_iter: int
    cause: str                      # "grace" or "hard_cap"
    required_classes: tuple


def _validate_samples(state: NetworkState, samples) -> None:
    if not samples:
        raise ConfigError("empty sample set")
    c = state.spec.num_classes
    for i, s in enumerate(samples):
        labs = s.labels[s.labels != IGNORE_LABEL]
        if labs.size and labs.max() >= c:
            raise ConfigError(
                f"sample {i} has label {int(labs.max())} >= num_classes {c}")


def _random_crop(sample: TrainSample, size: int,
                 rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
    img = sample.image
    if img.ndim == 2:
        img = img[None]
    _, h, w = img.shape
    if h < size or w < size:
        raise ConfigError(f"sample extents {(h, w)} smaller than crop {size}")
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    crop = img[:, y:y + size, x:x + size]
    labels = sample.labels[y:y + size, x:x + size]
    return Tensor(crop[None]), labels


def _train_step(state: NetworkState, image: Tensor, labels: np.ndarray,
                config: TrainConfig) -> float:
    scores, cache = forward(state, image)
    res = softmax_xent_pixelwise(scores, labels)
    if res.all_ignored:
        return 0.0
    grads = backward(state, cache, res.grad)
    sgd_step(state.params, grads, state.velocity,
             config.lr, config.momentum, config.weight_decay)
    return res.loss


def train_supervised(state: NetworkState, samples: list[TrainSample],
                     config: TrainConfig) -> tuple[NetworkState, list[float]]:
    """SGD over random crops of random samples; returns per-iteration loss."""
    _validate_samples(state, samples)
    rng = np.random.default_rng(config.seed)
    trace: list[float] = []
    for _ in range(config.max_iters):
        i = int(rng.integers(0, len(samples)))
        image, labels = _random_crop(samples[i], config.crop_size, rng)
        trace.append(_train_step(state, image, labels, config))
    return state, trace


def pad_to_grid(image: np.ndarray) -> tuple[Tensor, tuple[int, int]]:
    """Replicate-pad an image so both extents are pooling-compatible."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    _, h, w = img.shape
    th = max(MIN_EXTENT, -(-h // POOL_FACTOR) * POOL_FACTOR)
    tw = max(MIN_EXTENT, -(-w // POOL_FACTOR) * POOL_FACTOR)
    if (th, tw) != (h, w):
        img = np.pad(img, ((0, 0), (0, th - h), (0, tw - w)), mode="edge")
    return Tensor(img[None]), (h, w)


def infer_full(state: NetworkState,
               image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Whole-image inference at arbitrary extents: replicate-pad to the
    pooling grid, forward, crop scores back. Returns (scores, labels)."""
    padded, (h, w) = pad_to_grid(image)
    scores, _ = forward(state, padded, want_cache=False)
    scores = np.ascontiguousarray(scores[:, :h, :w])
    return scores, predict_labels(scores)


def train_unsupervised(state: NetworkState, test_image: np.ndarray,
                       preseg: np.ndarray, config: TrainConfig,
                       early: EarlyStopConfig) -> tuple[NetworkState, StopReport]:
    """Fine-tune on crops of the test image labeled by its pre-segmentation.

    Every check_every iterations the full image is segmented; once every
    pre-segmentation class appears in the output, a countdown of grace_iters
    further iterations starts, after which training stops. Runs never exceed
    hard_cap iterations.
    """
    preseg = np.asarray(preseg, dtype=np.uint8)
    required = tuple(sorted(int(v) for v in np.unique(preseg)
                            if v != IGNORE_LABEL))
    if len(required) < 2:
        raise ConfigError(
            f"pre-segmentation must contain >= 2 classes, got {required}")
    hw = np.asarray(test_image).shape[-2:]
    if preseg.shape != hw:
        raise ShapeError("preseg", hw, preseg.shape)
    sample = TrainSample(test_image, preseg)
    _validate_samples(state, [sample])

    rng = np.random.default_rng(config.seed)
    trigger = None
    stop_at = early.hard_cap
    it = 0
    while it < stop_at:
        it += 1
        image, labels = _random_crop(sample, config.crop_size, rng)
        _train_step(state, image, labels, config)
        if trigger is None and it % early.check_every == 0:
            _, pred = infer_full(state, test_image)
            present = set(int(v) for v in np.unique(pred))
            if all(c in present for c in required):
                trigger = it
                stop_at = min(it + early.grace_iters, early.hard_cap)
    if trigger is not None and trigger + early.grace_iters <= early.hard_cap:
        cause = "grace"
    else:
        cause = "hard_cap"
    return state, StopReport(trigger, it, cause, required)
