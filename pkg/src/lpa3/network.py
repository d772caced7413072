"""Layer-stack classifier exposing logits and intermediate activations.

A :class:`Network` is built from a list of :class:`LayerSpec` entries and an
input shape. ``forward`` returns the logits together with the output of
every ``relu`` layer; those are the activations the perceptual distance
stacks.

Checkpoints use a small binary container::

    b"LPA3NET1" | uint32 LE header length | UTF-8 JSON header |
    float64 LE parameter blocks in layer order | float64 LE dualnorm statistics
"""
from __future__ import annotations

import contextlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

MAGIC = b"LPA3NET1"
LAYER_KINDS = ("dense", "conv2d", "relu", "flatten", "dualnorm")
MODES = ("main_stats", "aug_stats")


class NetworkSpecError(ValueError):
    """Layer specification does not compose with the input shape."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """One layer. ``dims`` depends on ``kind``:

    * dense: ``(in_features, out_features)``
    * conv2d: ``(in_channels, out_channels, kernel[, padding])``
    * dualnorm: ``(features,)``
    * relu, flatten: ``()``
    """

    kind: str
    dims: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise NetworkSpecError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(d["kind"], tuple(d.get("dims", ())))


def dense(n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec("dense", (n_in, n_out))


def conv2d(in_channels: int, out_channels: int, kernel: int, padding: int = 0) -> LayerSpec:
    return LayerSpec("conv2d", (in_channels, out_channels, kernel, padding))


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dualnorm(features: int) -> LayerSpec:
    return LayerSpec("dualnorm", (features,))


def mlp_spec(input_shape: Sequence[int], hidden=(128, 64), num_classes: int = 10, norm: bool = False):
    """Flatten, then dense/relu blocks; the default is 784 -> 128 -> 64 -> C."""
    width = int(np.prod(input_shape))
    layers = [flatten()] if len(input_shape) > 1 else []
    for h in hidden:
        layers.append(dense(width, h))
        if norm:
            layers.append(dualnorm(h))
        layers.append(relu())
        width = h
    layers.append(dense(width, num_classes))
    return layers


def convnet_spec(input_shape: Sequence[int], channels: int = 8, kernel: int = 3, num_classes: int = 10,
                 padding: int = 1, norm: bool = False):
    """conv -> relu -> flatten -> dense, e.g. 1x28x28 -> 8ch 3x3 -> C."""
    c, h, w = input_shape
    layers = [conv2d(c, channels, kernel, padding)]
    if norm:
        layers.append(dualnorm(channels))
    layers += [relu(), flatten()]
    ho, wo = h + 2 * padding - kernel + 1, w + 2 * padding - kernel + 1
    layers.append(dense(channels * ho * wo, num_classes))
    return layers


def infer_shapes(layers: Sequence[LayerSpec], input_shape: Sequence[int]) -> list[tuple[int, ...]]:
    """Output shape (without batch axis) after each layer; raises if layers do not compose."""
    shape = tuple(int(s) for s in input_shape)
    out = []
    for i, layer in enumerate(layers):
        if layer.kind == "dense":
            n_in, n_out = layer.dims
            if shape != (n_in,):
                raise NetworkSpecError(f"layer {i} (dense {n_in}->{n_out}) got input shape {shape}")
            shape = (n_out,)
        elif layer.kind == "conv2d":
            if len(layer.dims) not in (3, 4):
                raise NetworkSpecError(f"layer {i}: conv2d dims are (in, out, kernel[, padding])")
            c_in, c_out, k = layer.dims[:3]
            p = layer.dims[3] if len(layer.dims) == 4 else 0
            if len(shape) != 3 or shape[0] != c_in:
                raise NetworkSpecError(f"layer {i} (conv2d, {c_in} channels) got input shape {shape}")
            if k > 5:
                raise NetworkSpecError(f"layer {i}: kernel {k} > 5 unsupported")
            h, w = shape[1] + 2 * p - k + 1, shape[2] + 2 * p - k + 1
            if h < 1 or w < 1:
                raise NetworkSpecError(f"layer {i}: kernel larger than input")
            shape = (c_out, h, w)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "dualnorm":
            if shape[0] != layer.dims[0]:
                raise NetworkSpecError(f"layer {i}: dualnorm over {layer.dims[0]} features got {shape}")
        out.append(shape)
    return out


@dataclass
class Network:
    """Classifier F(x) = M(E(x)) as an explicit layer stack."""

    layers: list[LayerSpec]
    input_shape: tuple[int, ...]
    params: list[list[Tensor]]
    stats: dict[int, dict[str, list[np.ndarray]]] = field(default_factory=dict)
    norm_momentum: float = 0.1
    norm_eps: float = 1e-5

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.shapes = infer_shapes(self.layers, self.input_shape)
        if len(self.shapes[-1]) != 1:
            raise NetworkSpecError("network must end in a flat logit vector")
        for i, layer in enumerate(self.layers):
            if layer.kind == "dualnorm" and i not in self.stats:
                c = layer.dims[0]
                self.stats[i] = {m: [np.zeros(c), np.ones(c)] for m in MODES}

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    @property
    def layer_dims(self) -> list[tuple[int, int, int]]:
        """(width, height, channels) of each relu activation; flat vectors are 1 x 1 x d."""
        dims = []
        for layer, shape in zip(self.layers, self.shapes):
            if layer.kind == "relu":
                dims.append((1, 1, shape[0]) if len(shape) == 1 else (shape[2], shape[1], shape[0]))
        return dims

    def parameters(self) -> list[Tensor]:
        return [p for group in self.params for p in group]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    @contextlib.contextmanager
    def frozen(self):
        """Temporarily stop tracking parameter gradients (e.g. while attacking inputs)."""
        params = self.parameters()
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, f in zip(params, flags):
                p.requires_grad = f

    def _as_batch(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else T.tensor(np.asarray(x, dtype=np.float64))
        if x.shape == self.input_shape:
            x = T.reshape(x, (1,) + self.input_shape)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match network input {self.input_shape}")
        return x

    def forward(self, x, mode: str = "main_stats", training: bool = False):
        """Return ``(logits, activations)`` for a batch (or a single unbatched sample)."""
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        h = self._as_batch(x)
        batch = h.shape[0]
        acts = []
        for i, (layer, params) in enumerate(zip(self.layers, self.params)):
            if layer.kind == "dense":
                w, b = params
                h = T.add(T.matmul(h, T.transpose(w)), T.tile_rows(b, batch))
            elif layer.kind == "conv2d":
                w, b = params
                h = T.conv2d(h, w, b, padding=layer.dims[3] if len(layer.dims) == 4 else 0)
            elif layer.kind == "relu":
                h = T.relu(h)
                acts.append(h)
            elif layer.kind == "flatten":
                h = T.reshape(h, (batch, -1))
            elif layer.kind == "dualnorm":
                h = self._dualnorm(i, h, params, mode, training)
        return h, acts

    __call__ = forward

    def _dualnorm(self, i, h, params, mode, training):
        gamma, beta = params
        axes = tuple(a for a in range(h.ndim) if a != 1)
        running = self.stats[i][mode]
        if training and h.shape[0] > 1:
            mu = h.data.mean(axis=axes)
            var = h.data.var(axis=axes)
            running[0] = (1 - self.norm_momentum) * running[0] + self.norm_momentum * mu
            running[1] = (1 - self.norm_momentum) * running[1] + self.norm_momentum * var
        else:
            mu, var = running
        # batch statistics are treated as constants (no gradient through them)
        inv = 1.0 / np.sqrt(var + self.norm_eps)
        scale = T.mul(gamma, inv)
        shift = T.sub(beta, T.mul(gamma, mu * inv))
        return T.scale_shift(h, scale, shift)

    def predict_proba(self, x, mode: str = "main_stats") -> Tensor:
        logits, _ = self.forward(x, mode)
        return T.softmax(logits, axis=-1)

    def copy(self) -> "Network":
        params = [[T.Tensor(p.data.copy(), requires_grad=p.requires_grad) for p in g] for g in self.params]
        stats = {i: {m: [a.copy() for a in v] for m, v in s.items()} for i, s in self.stats.items()}
        return Network(list(self.layers), self.input_shape, params, stats, self.norm_momentum, self.norm_eps)


def forward(net: Network, x, mode: str = "main_stats", training: bool = False):
    return net.forward(x, mode, training)


def predict_proba(net: Network, x, mode: str = "main_stats") -> Tensor:
    return net.predict_proba(x, mode)


def init_network(layers: Sequence[LayerSpec], input_shape: Sequence[int], seed: int) -> Network:
    """Kaiming-uniform weights, PyTorch-style uniform biases, all seeded from ``seed``."""
    layers = list(layers)
    infer_shapes(layers, input_shape)
    rng = np.random.default_rng(seed)
    params: list[list[Tensor]] = []
    for layer in layers:
        if layer.kind == "dense":
            n_in, n_out = layer.dims
            params.append(_kaiming(rng, (n_out, n_in), n_in, n_out))
        elif layer.kind == "conv2d":
            c_in, c_out, k = layer.dims[:3]
            fan_in = c_in * k * k
            params.append(_kaiming(rng, (c_out, c_in, k, k), fan_in, c_out))
        elif layer.kind == "dualnorm":
            c = layer.dims[0]
            params.append([T.Tensor(np.ones(c), requires_grad=True), T.Tensor(np.zeros(c), requires_grad=True)])
        else:
            params.append([])
    return Network(layers, tuple(input_shape), params)


def _kaiming(rng, shape, fan_in, n_out):
    bound = math.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=shape)
    b = rng.uniform(-1.0 / math.sqrt(fan_in), 1.0 / math.sqrt(fan_in), size=n_out)
    return [T.Tensor(w, requires_grad=True), T.Tensor(b, requires_grad=True)]


# ------------------------------------------------------------- checkpoints


def save_checkpoint(net: Network, path) -> None:
    header = {
        "version": 1,
        "input_shape": list(net.input_shape),
        "layers": [layer.to_dict() for layer in net.layers],
        "param_shapes": [[list(p.shape) for p in group] for group in net.params],
        "norm_momentum": net.norm_momentum,
        "norm_eps": net.norm_eps,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(blob)), blob]
    for p in net.parameters():
        chunks.append(p.data.astype("<f8").tobytes())
    for i in sorted(net.stats):
        for mode in MODES:
            for arr in net.stats[i][mode]:
                chunks.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not an LPA3NET1 checkpoint")
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + n].decode("utf-8"))
    offset = 12 + n

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated parameter data")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
        return arr

    layers = [LayerSpec.from_dict(d) for d in header["layers"]]
    params = [[T.Tensor(take(tuple(s)), requires_grad=True) for s in group] for group in header["param_shapes"]]
    stats = {}
    for i, layer in enumerate(layers):
        if layer.kind == "dualnorm":
            c = layer.dims[0]
            stats[i] = {m: [take((c,)), take((c,))] for m in MODES}
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return Network(layers, tuple(header["input_shape"]), params, stats,
                   header.get("norm_momentum", 0.1), header.get("norm_eps", 1e-5))
