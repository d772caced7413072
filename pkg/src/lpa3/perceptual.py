"""Perceptual distance computed from the classifier's own activations.

Each relu activation is channel-normalised (unit L2 norm across channels at
every spatial position), divided by ``sqrt(width * height)`` of that layer,
flattened, and concatenated into ``phi(x)``. The distance between two inputs
is ``||phi(x) - phi(x')||_2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .network import Network
from .tensor import Tensor

NORMALIZATIONS = ("channel", "layer")


@dataclass
class PerceptualEmbedding:
    blocks: list[Tensor]
    vector: Tensor

    @property
    def length(self) -> int:
        return self.vector.shape[1]


def embed_activations(activations, normalize: str = "channel") -> PerceptualEmbedding:
    if normalize not in NORMALIZATIONS:
        raise ValueError(f"normalize must be one of {NORMALIZATIONS}")
    blocks = []
    for a in activations:
        batch = a.shape[0]
        if a.ndim == 2:
            area = 1
            normed = T.channel_normalize(a, axis=1)
        elif a.ndim == 4:
            area = a.shape[2] * a.shape[3]
            if normalize == "channel":
                normed = T.reshape(T.channel_normalize(a, axis=1), (batch, -1))
            else:
                normed = T.channel_normalize(T.reshape(a, (batch, -1)), axis=1)
        else:
            raise ValueError(f"unsupported activation rank {a.ndim}")
        if normed.ndim != 2:
            normed = T.reshape(normed, (batch, -1))
        blocks.append(normed if area == 1 else T.mul(normed, 1.0 / math.sqrt(area)))
    return PerceptualEmbedding(blocks, T.concat(blocks, axis=1))


def embed(net: Network, x, mode: str = "main_stats", normalize: str = "channel") -> PerceptualEmbedding:
    _, acts = net.forward(x, mode)
    if not acts:
        raise ValueError("network has no hidden activations to embed")
    return embed_activations(acts, normalize)


def distance(phi_a: Tensor, phi_b: Tensor) -> Tensor:
    """Per-sample L2 distance between two (B, D) embeddings."""
    if phi_a.shape != phi_b.shape:
        raise ValueError(f"embedding shapes differ: {phi_a.shape} vs {phi_b.shape}")
    return T.l2_norm(T.sub(phi_a, phi_b), axis=1)


def lpips(net: Network, x, x_prime, mode: str = "main_stats", normalize: str = "channel") -> Tensor:
    """Per-sample perceptual distance, differentiable in both arguments."""
    x = x if isinstance(x, Tensor) else T.tensor(x)
    x_prime = x_prime if isinstance(x_prime, Tensor) else T.tensor(x_prime)
    if x.shape != x_prime.shape:
        raise ValueError(f"input shapes differ: {x.shape} vs {x_prime.shape}")
    a = embed(net, x, mode, normalize).vector
    b = embed(net, x_prime, mode, normalize).vector
    return distance(a, b)


def lpips_value(net: Network, x, x_prime, mode: str = "main_stats") -> np.ndarray:
    with T.no_grad():
        return lpips(net, x, x_prime, mode).data.copy()
