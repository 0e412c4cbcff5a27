"""Core array types: the rank-4 tensor, conv parameters, init and SGD.

Data layout is batch-outermost row-major (batch, channels, height, width),
double precision throughout. All serialization honors this layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ShapeError

# Reserved label excluded from loss, gradients, and metrics.
# Palette convention: class i -> gray level i, ignore -> 255.
IGNORE_LABEL = 255


@dataclass
class Tensor:
    """Dense rank-4 array (batch, channels, height, width) with optional grad."""

    values: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 4:
            raise ShapeError("rank", 4, self.values.ndim)
        if self.grad is not None:
            self.grad = np.ascontiguousarray(self.grad, dtype=np.float64)
            if self.grad.shape != self.values.shape:
                raise ShapeError("grad", self.values.shape, self.grad.shape)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.values.shape

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64))

    @classmethod
    def from_image(cls, image: np.ndarray) -> "Tensor":
        """Wrap an (H, W) or (C, H, W) array as a batch-1 tensor."""
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None, None]
        elif arr.ndim == 3:
            arr = arr[None]
        return cls(arr)

    def check_finite(self) -> "Tensor":
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("tensor contains NaN/Inf")
        return self


@dataclass
class ConvParams:
    """Convolution parameters: weights (out, in, kH, kW), per-out-channel bias."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ShapeError("weights rank", 4, self.weights.ndim)
        if self.weights.shape[2] < 1 or self.weights.shape[3] < 1:
            raise ShapeError("kernel extents", ">= 1", self.weights.shape[2:])
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("bias", (self.weights.shape[0],), self.bias.shape)
        if self.stride < 1:
            raise ShapeError("stride", ">= 1", self.stride)
        if self.padding < 0:
            raise ShapeError("padding", ">= 0", self.padding)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "ConvParams":
        return ConvParams(self.weights.copy(), self.bias.copy(),
                          self.stride, self.padding)


@dataclass
class ParamGrads:
    """Gradients matching one ConvParams."""

    weights: np.ndarray
    bias: np.ndarray


def xavier_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw in +-sqrt(6 / (fan_in + fan_out)); deterministic given seed.

    For conv weights (out, in, kH, kW): fan_in = in*kH*kW, fan_out = out*kH*kW.
    For a plain 2-D shape (out, in): fans are the two extents.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        fan_in = shape[1] * receptive
        fan_out = shape[0] * receptive
    elif len(shape) == 2:
        fan_out, fan_in = shape
    else:
        raise ShapeError("xavier shape rank", "2 or 4", len(shape))
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float64)


def sgd_step(params: dict, grads: dict, velocity: dict,
             lr: float, momentum: float, weight_decay: float) -> None:
    """One SGD-with-momentum update, in place.

    v <- momentum*v - lr*(g + wd*w);  w <- w + v.
    `params` maps name -> ConvParams, `grads` name -> ParamGrads, `velocity`
    name -> (vw, vb) arrays (created lazily as zeros).
    """
    for name, p in params.items():
        g = grads[name]
        if g.weights.shape != p.weights.shape:
            raise ShapeError(f"{name}.weights", p.weights.shape, g.weights.shape)
        if g.bias.shape != p.bias.shape:
            raise ShapeError(f"{name}.bias", p.bias.shape, g.bias.shape)
        if name not in velocity:
            velocity[name] = (np.zeros_like(p.weights), np.zeros_like(p.bias))
        vw, vb = velocity[name]
        vw *= momentum
        vw -= lr * (g.weights + weight_decay * p.weights)
        vb *= momentum
        vb -= lr * (g.bias + weight_decay * p.bias)
        p.weights += vw
        p.bias += vb
