"""Forward/backward kernels: convolution, max-pool, upsampling, pixel loss.

Every op is pure (fresh outputs) and deterministic. Gradients are hand-wired
analytic derivatives; there is no autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import IGNORE_LABEL, ConvParams, ParamGrads, Tensor


def _pad_zeros(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_out_extent(extent: int, k: int, p: int, s: int) -> int:
    return (extent + 2 * p - k) // s + 1


def _windows(x_pad: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """View of all kernel-sized windows, strided: (N, C, OH, OW, kh, kw)."""
    w = sliding_window_view(x_pad, (kh, kw), axis=(2, 3))
    return w[:, :, ::stride, ::stride]


def conv2d_forward(x: Tensor, params: ConvParams) -> Tensor:
    """Standard cross-correlation with zero padding.

    Output extents follow floor((H + 2p - kH)/stride) + 1; each output value
    is the bias plus the windowed dot product.
    """
    n, c, h, w = x.shape
    co, ci, kh, kw = params.weights.shape
    if c != ci:
        raise ShapeError("in_channels", ci, c)
    p, s = params.padding, params.stride
    if h + 2 * p < kh or w + 2 * p < kw:
        raise ShapeError("padded spatial extents", f">= kernel ({kh}x{kw})",
                         (h + 2 * p, w + 2 * p))
    x_pad = _pad_zeros(x.values, p)
    win = _windows(x_pad, kh, kw, s)
    # (N, OH, OW, Cout) <- contract over (Cin, kh, kw)
    out = np.tensordot(win, params.weights, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += params.bias[None, :, None, None]
    return Tensor(out)


def conv2d_backward(x: Tensor, params: ConvParams,
                    grad_out: Tensor) -> tuple[Tensor, ParamGrads]:
    """Analytic gradients of conv2d_forward w.r.t. input, weights, and bias."""
    n, c, h, w = x.shape
    co, ci, kh, kw = params.weights.shape
    if c != ci:
        raise ShapeError("in_channels", ci, c)
    p, s = params.padding, params.stride
    oh = _conv_out_extent(h, kh, p, s)
    ow = _conv_out_extent(w, kw, p, s)
    if grad_out.shape != (n, co, oh, ow):
        raise ShapeError("grad_out", (n, co, oh, ow), grad_out.shape)
    g = grad_out.values

    grad_b = g.sum(axis=(0, 2, 3))

    x_pad = _pad_zeros(x.values, p)
    win = _windows(x_pad, kh, kw, s)
    # (Cout, Cin, kh, kw) <- contract over (N, OH, OW)
    grad_w = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))

    grad_x_pad = np.zeros_like(x_pad)
    for dy in range(kh):
        for dx in range(kw):
            # (N, OH, OW, Cin)
            contrib = np.tensordot(g, params.weights[:, :, dy, dx],
                                   axes=([1], [0]))
            grad_x_pad[:, :, dy:dy + s * oh:s, dx:dx + s * ow:s] += \
                contrib.transpose(0, 3, 1, 2)
    grad_x = grad_x_pad[:, :, p:p + h, p:p + w] if p else grad_x_pad
    return Tensor(np.ascontiguousarray(grad_x)), ParamGrads(grad_w, grad_b)


@dataclass
class PoolCache:
    """Winning window slot per output (0..3, row-major) plus pad bookkeeping."""

    argmax: np.ndarray
    in_shape: tuple
    padded_shape: tuple


def maxpool_forward(x: Tensor) -> tuple[Tensor, PoolCache]:
    """2x2 max pooling, stride 2. Odd extents are replicate-padded first.

    Ties resolve to the first index in row-major window order.
    """
    n, c, h, w = x.shape
    v = x.values
    ph, pw = h % 2, w % 2
    if ph or pw:
        v = np.pad(v, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    hp, wp = v.shape[2], v.shape[3]
    blocks = v.reshape(n, c, hp // 2, 2, wp // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(n, c, hp // 2, wp // 2, 4)
    idx = flat.argmax(axis=4)
    out = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]
    cache = PoolCache(idx.astype(np.int8), (n, c, h, w), (n, c, hp, wp))
    return Tensor(np.ascontiguousarray(out)), cache


def maxpool_backward(cache: PoolCache, grad_out: Tensor) -> Tensor:
    """Route gradient to the argmax positions; fold replicate-pad rows back."""
    n, c, h, w = cache.in_shape
    _, _, hp, wp = cache.padded_shape
    oh, ow = hp // 2, wp // 2
    if grad_out.shape != (n, c, oh, ow):
        raise ShapeError("grad_out", (n, c, oh, ow), grad_out.shape)
    idx = cache.argmax.astype(np.intp)
    g_pad = np.zeros((n, c, hp, wp))
    ns, cs, ys, xs = np.ix_(np.arange(n), np.arange(c),
                            np.arange(oh), np.arange(ow))
    rows = 2 * ys + idx // 2
    cols = 2 * xs + idx % 2
    # windows are disjoint, so plain assignment is safe
    g_pad[ns, cs, rows, cols] = grad_out.values
    if hp != h:
        g_pad[:, :, h - 1, :] += g_pad[:, :, h, :]
    if wp != w:
        g_pad[:, :, :, w - 1] += g_pad[:, :, :, w]
    return Tensor(np.ascontiguousarray(g_pad[:, :, :h, :w]))


def bilinear_kernel_1d(factor: int) -> np.ndarray:
    """Length-2*factor bilinear interpolation kernel (align-to-corners off)."""
    k = 2 * factor
    center = factor - 0.5 if k % 2 == 0 else factor - 1
    return 1.0 - np.abs(np.arange(k) - center) / factor


def make_bilinear_upsample_params(channels: int, factor: int) -> ConvParams:
    """Transposed-conv parameters (kernel 2*factor, stride factor) that
    reproduce per-channel bilinear interpolation: diagonal kernel, zero bias.
    """
    k1 = bilinear_kernel_1d(factor)
    k2 = np.outer(k1, k1)
    w = np.zeros((channels, channels, 2 * factor, 2 * factor))
    for ch in range(channels):
        w[ch, ch] = k2
    return ConvParams(w, np.zeros(channels), stride=factor, padding=factor // 2)


def conv_transpose2d_forward(x: Tensor, params: ConvParams) -> Tensor:
    """Transposed convolution (fractional-stride upsampling).

    weights are (out, in, kH, kW); output extents (H-1)*s - 2p + kH.
    """
    n, c, h, w = x.shape
    co, ci, kh, kw = params.weights.shape
    if c != ci:
        raise ShapeError("in_channels", ci, c)
    s, p = params.stride, params.padding
    oh_full = (h - 1) * s + kh
    ow_full = (w - 1) * s + kw
    out = np.zeros((n, co, oh_full, ow_full))
    for dy in range(kh):
        for dx in range(kw):
            contrib = np.tensordot(x.values, params.weights[:, :, dy, dx],
                                   axes=([1], [1]))
            out[:, :, dy:dy + s * h:s, dx:dx + s * w:s] += \
                contrib.transpose(0, 3, 1, 2)
    if p:
        out = out[:, :, p:oh_full - p, p:ow_full - p]
    out = np.ascontiguousarray(out)
    out += params.bias[None, :, None, None]
    return Tensor(out)


def conv_transpose2d_backward(x: Tensor, params: ConvParams,
                              grad_out: Tensor) -> tuple[Tensor, ParamGrads]:
    """Gradients of conv_transpose2d_forward."""
    n, c, h, w = x.shape
    co, ci, kh, kw = params.weights.shape
    s, p = params.stride, params.padding
    oh = (h - 1) * s - 2 * p + kh
    ow = (w - 1) * s - 2 * p + kw
    if grad_out.shape != (n, co, oh, ow):
        raise ShapeError("grad_out", (n, co, oh, ow), grad_out.shape)
    g_pad = _pad_zeros(grad_out.values, p)

    grad_b = grad_out.values.sum(axis=(0, 2, 3))
    grad_w = np.zeros_like(params.weights)
    grad_x = np.zeros_like(x.values)
    for dy in range(kh):
        for dx in range(kw):
            sl = g_pad[:, :, dy:dy + s * h:s, dx:dx + s * w:s]
            # d out[., o, ...] / d x[., i, ...] couples through w[o, i, dy, dx]
            grad_w[:, :, dy, dx] = np.tensordot(sl, x.values,
                                                axes=([0, 2, 3], [0, 2, 3]))
            grad_x += np.tensordot(sl, params.weights[:, :, dy, dx],
                                   axes=([1], [0])).transpose(0, 3, 1, 2)
    return Tensor(grad_x), ParamGrads(grad_w, grad_b)


def upsample(x: Tensor, factor: int, mode: str = "bilinear") -> Tensor:
    """Scale spatial extents by an integer factor.

    "bilinear" applies fixed interpolation weights; "learned" builds a fresh
    transposed convolution initialized to those same weights (so the two modes
    coincide at initialization). Factor 1 is the identity.
    """
    if factor < 1:
        raise ShapeError("factor", ">= 1", factor)
    if mode not in ("bilinear", "learned"):
        raise ShapeError("mode", "bilinear|learned", mode)
    if factor == 1:
        return Tensor(x.values.copy())
    params = make_bilinear_upsample_params(x.shape[1], factor)
    out = conv_transpose2d_forward(x, params)
    # odd factors leave one surplus row/column after symmetric trimming
    h, w = x.shape[2] * factor, x.shape[3] * factor
    return Tensor(np.ascontiguousarray(out.values[:, :, :h, :w]))


def relu_forward(x: Tensor) -> tuple[Tensor, np.ndarray]:
    mask = x.values > 0
    return Tensor(np.where(mask, x.values, 0.0)), mask


def relu_backward(mask: np.ndarray, grad_out: Tensor) -> Tensor:
    if mask.shape != grad_out.shape:
        raise ShapeError("grad_out", mask.shape, grad_out.shape)
    return Tensor(np.where(mask, grad_out.values, 0.0))


@dataclass
class LossResult:
    """Mean pixel-wise cross-entropy and its gradient w.r.t. the scores."""

    loss: float
    grad: np.ndarray          # (C, H, W)
    pixel_count: int          # non-ignored pixels
    all_ignored: bool


def softmax_xent_pixelwise(scores: np.ndarray, target: np.ndarray) -> LossResult:
    """Mean negative log-softmax over non-ignored pixels.

    scores: (C, H, W); target: (H, W) with labels < C or IGNORE_LABEL.
    grad is (softmax - one_hot)/count at counted pixels, zero at ignored ones.
    """
    c, h, w = scores.shape
    if target.shape != (h, w):
        raise ShapeError("target", (h, w), target.shape)
    tgt = np.asarray(target)
    mask = tgt != IGNORE_LABEL
    count = int(mask.sum())
    if count == 0:
        return LossResult(0.0, np.zeros_like(scores), 0, True)
    labels = tgt[mask].astype(np.intp)
    if labels.max() >= c:
        raise ShapeError("target labels", f"< {c}", int(labels.max()))

    shifted = scores - scores.max(axis=0, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=0))
    log_p = shifted - log_z[None]

    flat_lp = log_p.reshape(c, -1)[:, mask.ravel()]
    loss = -flat_lp[labels, np.arange(count)].mean()

    grad = np.exp(log_p)
    one_hot = np.zeros_like(grad)
    ys, xs = np.nonzero(mask)
    one_hot[labels, ys, xs] = 1.0
    grad = (grad - one_hot) / count
    grad[:, ~mask] = 0.0
    return LossResult(float(loss), grad, count, False)


def resize_bilinear(image: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resample of an (H, W) or (C, H, W) array to target extents.

    Pixel centers follow the align-to-corners-off convention; source
    coordinates are clamped at the borders.
    """
    arr = np.asarray(image, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    _, h, w = arr.shape
    th, tw = out_hw
    if th < 1 or tw < 1:
        raise ShapeError("target extents", ">= 1", (th, tw))

    def axis_coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        lo = np.clip(np.floor(src).astype(np.intp), 0, n_in - 1)
        hi = np.clip(lo + 1, 0, n_in - 1)
        frac = np.clip(src - np.floor(src), 0.0, 1.0)
        frac[src < 0] = 0.0
        return lo, hi, frac

    y0, y1, fy = axis_coords(th, h)
    x0, x1, fx = axis_coords(tw, w)
    fy = fy[:, None]
    fx = fx[None, :]
    top = arr[:, y0][:, :, x0] * (1 - fx) + arr[:, y0][:, :, x1] * fx
    bot = arr[:, y1][:, :, x0] * (1 - fx) + arr[:, y1][:, :, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out[0] if squeeze else out


def resize_nearest_labels(labels: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resample of a label map to target extents."""
    h, w = labels.shape
    th, tw = out_hw
    ys = np.minimum((np.arange(th) * (h / th) + 0.5 * (h / th)).astype(np.intp),
                    h - 1)
    xs = np.minimum((np.arange(tw) * (w / tw) + 0.5 * (w / tw)).astype(np.intp),
                    w - 1)
    return labels[np.ix_(ys, xs)]
