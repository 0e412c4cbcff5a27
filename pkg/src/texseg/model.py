"""Four-block fully convolutional network with shallow skip fusion.

Topology: four conv blocks (3x3, ReLU, 2x2 max-pool each), then two 1x1
fully-connected-equivalent layers and a per-class score head. Additional
per-class 1x1 score heads tap the pooled outputs of blocks 1-3; each is
summed into the x2 upsampling chain so the final score volume matches the
input resolution. Upsampling layers are learned transposed convolutions
initialized to bilinear interpolation.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ConfigError, ShapeError
from .ops import (conv2d_backward, conv2d_forward, conv_transpose2d_backward,
                  conv_transpose2d_forward, make_bilinear_upsample_params,
                  maxpool_backward, maxpool_forward, relu_backward,
                  relu_forward)
from .tensor import ConvParams, ParamGrads, Tensor, xavier_init

MIN_EXTENT = 32
POOL_FACTOR = 16  # four 2x2 pool stages

_CKPT_MAGIC = b"TEXSEGNET"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Layer topology. Exactly four conv blocks; head widths equal the class
    count on every score and upsampling layer."""

    num_classes: int
    block_channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    convs_per_block: tuple[int, int, int, int] = (2, 2, 2, 2)
    head_channels: int = 256
    input_channels: int = 1

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.block_channels) != 4 or len(self.convs_per_block) != 4:
            raise ConfigError("exactly four conv blocks required")
        if any(c < 1 for c in self.block_channels + self.convs_per_block):
            raise ConfigError("block widths and depths must be positive")
        if self.input_channels not in (1, 3):
            raise ConfigError("input_channels must be 1 or 3")

    def layer_names(self) -> list[str]:
        names = []
        for b in range(4):
            for i in range(self.convs_per_block[b]):
                names.append(f"conv{b + 1}_{i + 1}")
        names += ["conv5", "conv6", "score_deep",
                  "score_pool1", "score_pool2", "score_pool3",
                  "up_deep", "up3", "up2", "up1"]
        return names

    def to_dict(self) -> dict:
        return {"num_classes": self.num_classes,
                "block_channels": list(self.block_channels),
                "convs_per_block": list(self.convs_per_block),
                "head_channels": self.head_channels,
                "input_channels": self.input_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(num_classes=int(d["num_classes"]),
                   block_channels=tuple(d["block_channels"]),
                   convs_per_block=tuple(d["convs_per_block"]),
                   head_channels=int(d["head_channels"]),
                   input_channels=int(d["input_channels"]))


@dataclass
class NetworkState:
    """Learnable parameters keyed by layer name, plus momentum buffers."""

    spec: NetworkSpec
    seed: int
    params: dict[str, ConvParams]
    velocity: dict[str, tuple] = field(default_factory=dict)

    def copy(self) -> "NetworkState":
        return NetworkState(self.spec, self.seed,
                            {k: v.copy() for k, v in self.params.items()},
                            {k: (vw.copy(), vb.copy())
                             for k, (vw, vb) in self.velocity.items()})

    def param_count(self) -> int:
        return sum(p.weights.size + p.bias.size for p in self.params.values())


def build_fcnt(spec: NetworkSpec, rng: np.random.Generator | int) -> NetworkState:
    """Xavier-initialize all conv and 1x1 layers; upsampling layers start as
    bilinear interpolation with zero bias."""
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    else:
        seed = -1
    c = spec.num_classes
    params: dict[str, ConvParams] = {}

    def conv(name, cin, cout, k, pad):
        params[name] = ConvParams(xavier_init((cout, cin, k, k), rng),
                                  np.zeros(cout), stride=1, padding=pad)

    cin = spec.input_channels
    for b in range(4):
        cout = spec.block_channels[b]
        for i in range(spec.convs_per_block[b]):
            conv(f"conv{b + 1}_{i + 1}", cin, cout, 3, 1)
            cin = cout
    conv("conv5", spec.block_channels[3], spec.head_channels, 1, 0)
    conv("conv6", spec.head_channels, spec.head_channels, 1, 0)
    conv("score_deep", spec.head_channels, c, 1, 0)
    for b in range(3):
        conv(f"score_pool{b + 1}", spec.block_channels[b], c, 1, 0)
    for name in ("up_deep", "up3", "up2", "up1"):
        params[name] = make_bilinear_upsample_params(c, 2)
    return NetworkState(spec, seed, params)


@dataclass
class ForwardCache:
    """Activations kept for the backward pass."""

    input: Tensor
    relu_masks: dict
    pool_caches: dict
    layer_inputs: dict
    scores_shape: tuple


def _check_input(spec: NetworkSpec, image: Tensor) -> None:
    n, c, h, w = image.shape
    if n != 1:
        raise ShapeError("batch", 1, n)
    if c != spec.input_channels:
        raise ShapeError("channels", spec.input_channels, c)
    if h < MIN_EXTENT or w < MIN_EXTENT:
        raise ShapeError("spatial extents", f">= {MIN_EXTENT}", (h, w))
    if h % POOL_FACTOR or w % POOL_FACTOR:
        raise ShapeError("spatial extents", f"multiple of {POOL_FACTOR}", (h, w))


def forward(state: NetworkState, image: Tensor,
            want_cache: bool = True) -> tuple[np.ndarray, ForwardCache | None]:
    """Run the network on one image (batch 1); returns (C, H, W) scores.

    The deep head output is upsampled x2 and summed with the block-3 head,
    then x2 with the block-2 head, x2 with the block-1 head, and a final x2
    restores input resolution.
    """
    spec = state.spec
    _check_input(spec, image)
    # inputs arrive in [0, 1]; centering them keeps first-layer gradient
    # directions decorrelated, which deep Xavier-initialized stacks need
    image = Tensor(image.values - 0.5)
    p = state.params
    relu_masks, pool_caches, layer_inputs = {}, {}, {}

    def conv_relu(name, x):
        layer_inputs[name] = x
        y = conv2d_forward(x, p[name])
        y, mask = relu_forward(y)
        relu_masks[name] = mask
        return y

    def score(name, x):
        layer_inputs[name] = x
        return conv2d_forward(x, p[name])

    def up(name, x):
        layer_inputs[name] = x
        return conv_transpose2d_forward(x, p[name])

    x = image
    pooled = {}
    for b in range(4):
        for i in range(spec.convs_per_block[b]):
            x = conv_relu(f"conv{b + 1}_{i + 1}", x)
        layer_inputs[f"pool{b + 1}"] = x
        x, pc = maxpool_forward(x)
        pool_caches[f"pool{b + 1}"] = pc
        pooled[b + 1] = x

    x = conv_relu("conv5", x)
    x = conv_relu("conv6", x)
    deep = score("score_deep", x)

    f3 = Tensor(up("up_deep", deep).values +
                score("score_pool3", pooled[3]).values)
    f2 = Tensor(up("up3", f3).values + score("score_pool2", pooled[2]).values)
    f1 = Tensor(up("up2", f2).values + score("score_pool1", pooled[1]).values)
    out = up("up1", f1)

    scores = out.values[0]
    cache = None
    if want_cache:
        cache = ForwardCache(image, relu_masks, pool_caches, layer_inputs,
                             scores.shape)
    return scores, cache


def backward(state: NetworkState, cache: ForwardCache,
             grad_scores: np.ndarray) -> dict[str, ParamGrads]:
    """Chain-rule pass over the skip-fusion graph; sum nodes propagate the
    incoming gradient to both branches unchanged."""
    if grad_scores.shape != cache.scores_shape:
        raise ShapeError("grad_scores", cache.scores_shape, grad_scores.shape)
    spec = state.spec
    p = state.params
    grads: dict[str, ParamGrads] = {}

    def conv_back(name, g):
        gx, gp = conv2d_backward(cache.layer_inputs[name], p[name], g)
        grads[name] = gp
        return gx

    def conv_relu_back(name, g):
        g = relu_backward(cache.relu_masks[name], g)
        return conv_back(name, g)

    def up_back(name, g):
        gx, gp = conv_transpose2d_backward(cache.layer_inputs[name], p[name], g)
        grads[name] = gp
        return gx

    g = Tensor(grad_scores[None])
    g_f1 = up_back("up1", g)
    g_sp1 = conv_back("score_pool1", g_f1)
    g_f2 = up_back("up2", g_f1)
    g_sp2 = conv_back("score_pool2", g_f2)
    g_f3 = up_back("up3", g_f2)
    g_sp3 = conv_back("score_pool3", g_f3)
    g_deep = up_back("up_deep", g_f3)

    g = conv_back("score_deep", g_deep)
    g = conv_relu_back("conv6", g)
    g = conv_relu_back("conv5", g)

    pool_grads = {1: g_sp1, 2: g_sp2, 3: g_sp3, 4: g}
    g = None
    for b in range(4, 0, -1):
        gb = pool_grads[b]
        if g is not None:
            gb = Tensor(gb.values + g.values)
        g = maxpool_backward(cache.pool_caches[f"pool{b}"], gb)
        for i in range(spec.convs_per_block[b - 1], 0, -1):
            g = conv_relu_back(f"conv{b}_{i}", g)
    return grads


def predict_labels(scores: np.ndarray) -> np.ndarray:
    """Per-pixel argmax; ties break to the lowest class index."""
    if scores.shape[0] < 2:
        raise ShapeError("classes", ">= 2", scores.shape[0])
    return scores.argmax(axis=0).astype(np.uint8)


def rank_labels(scores: np.ndarray) -> np.ndarray:
    """Per-pixel descending sort of class indices, stable on ties: slice 0 is
    the best class, slice C-1 the worst."""
    return np.argsort(-scores, axis=0, kind="stable").astype(np.uint8)


def save_state(state: NetworkState, path) -> None:
    """Binary checkpoint: magic, version, JSON header, little-endian float64
    buffers, CRC32 trailer. A human-readable spec sidecar goes to <path>.json.
    """
    names = state.spec.layer_names()
    header = {"spec": state.spec.to_dict(), "seed": state.seed,
              "layers": [{"name": n,
                          "weights_shape": list(state.params[n].weights.shape),
                          "stride": state.params[n].stride,
                          "padding": state.params[n].padding}
                         for n in names]}
    hdr = json.dumps(header, sort_keys=True).encode()
    payload = bytearray()
    payload += struct.pack("<I", len(hdr))
    payload += hdr
    for n in names:
        prm = state.params[n]
        payload += prm.weights.astype("<f8").tobytes()
        payload += prm.bias.astype("<f8").tobytes()
    crc = zlib.crc32(bytes(payload))
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(payload)
        fh.write(struct.pack("<I", crc))
    with open(str(path) + ".json", "w") as fh:
        json.dump(header["spec"] | {"seed": state.seed}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")


def load_state(path, expect_classes: int | None = None) -> NetworkState:
    """Inverse of save_state; verifies magic, version, and checksum."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_CKPT_MAGIC) + 8 or blob[:len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a texseg checkpoint")
    off = len(_CKPT_MAGIC)
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    payload = blob[off:-4]
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt/truncated)")
    (hlen,) = struct.unpack_from("<I", payload, 0)
    header = json.loads(payload[4:4 + hlen].decode())
    spec = NetworkSpec.from_dict(header["spec"])
    if expect_classes is not None and spec.num_classes != expect_classes:
        raise CheckpointError(
            f"{path}: checkpoint has {spec.num_classes} classes, "
            f"expected {expect_classes}")
    params: dict[str, ConvParams] = {}
    pos = 4 + hlen
    for layer in header["layers"]:
        shape = tuple(layer["weights_shape"])
        wn = int(np.prod(shape))
        bn = shape[0]
        need = (wn + bn) * 8
        if pos + need > len(payload):
            raise CheckpointError(f"{path}: truncated buffer at {layer['name']}")
        w = np.frombuffer(payload, dtype="<f8", count=wn, offset=pos)
        pos += wn * 8
        b = np.frombuffer(payload, dtype="<f8", count=bn, offset=pos)
        pos += bn * 8
        params[layer["name"]] = ConvParams(w.reshape(shape).copy(), b.copy(),
                                           stride=layer["stride"],
                                           padding=layer["padding"])
    state = NetworkState(spec, int(header["seed"]), params)
    if set(params) != set(spec.layer_names()):
        raise CheckpointError(f"{path}: layer set does not match spec")
    return state
