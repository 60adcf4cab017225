"""Task heads on top of node embeddings."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import MLP, Module
from .tensor import Tensor


_TINY = np.finfo(np.float64).tiny
_EPS = np.finfo(np.float64).epsneg


def _hidden(d: int) -> list[int]:
    return [d, max(d // 2, 1)]


class EdgeDecoder(Module):
    """``sigmoid(MLP(concat(z_i, z_j)))`` with a 3-layer MLP."""

    def __init__(self, d_emb: int, rng: np.random.Generator, dropout: float = 0.1):
        self.d_emb = d_emb
        self.mlp = MLP([2 * d_emb, *_hidden(d_emb), 1], rng, dropout=dropout)

    def logits(self, z_i: Tensor, z_j: Tensor) -> Tensor:
        if z_i.shape[-1] != self.d_emb or z_j.shape[-1] != self.d_emb:
            raise T.DimensionError(f"edge decoder expects width {self.d_emb}, got {z_i.shape}, {z_j.shape}")
        out = self.mlp(T.concat([z_i, z_j], axis=-1))
        return T.reshape(out, out.shape[:-1])

    def __call__(self, z_i: Tensor, z_j: Tensor) -> Tensor:
        return T.sigmoid(self.logits(z_i, z_j))


class NodeDecoder(Module):
    """``softmax(MLP(z_i))`` over ``n_classes``."""

    def __init__(self, d_emb: int, n_classes: int, rng: np.random.Generator, dropout: float = 0.1):
        self.d_emb = d_emb
        self.mlp = MLP([d_emb, *_hidden(d_emb), n_classes], rng, dropout=dropout)

    def logits(self, z: Tensor) -> Tensor:
        if z.shape[-1] != self.d_emb:
            raise T.DimensionError(f"node decoder expects width {self.d_emb}, got {z.shape}")
        return self.mlp(z)

    def __call__(self, z: Tensor) -> Tensor:
        return T.softmax(self.logits(z), axis=-1)


def edge_probability(decoder: EdgeDecoder, z_i, z_j) -> float:
    """Scalar convenience wrapper for single pairs, kept strictly inside (0, 1)."""
    with T.no_grad():
        p = decoder(T.reshape(T.as_tensor(z_i), (1, -1)), T.reshape(T.as_tensor(z_j), (1, -1)))
    # float64 sigmoid rounds to exactly 0 or 1 once |logit| exceeds ~37
    return float(np.clip(p.data[0], _TINY, 1.0 - _EPS))


def node_class_probs(decoder: NodeDecoder, z_i) -> np.ndarray:
    with T.no_grad():
        return decoder(T.reshape(T.as_tensor(z_i), (1, -1))).data[0]
