"""Neighborhood edge features from anonymized walk sets.

For a node pair ``(i, j)`` at time ``t``: sample ``K`` walks from each end,
replace every node on a walk by its positional hit counts in both walk sets,
encode each step, encode each walk, and average over all ``2K`` walks.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .graph import TemporalAdjacency
from .nn import MLP, BiLSTM, Linear, Module, TimeEncoder
from .tensor import Tensor
from .walks import WalkBatch, WalkConfig, WalkSet, sample_walks


@dataclass(frozen=True)
class NEFConfig:
    d_pos: int = 16
    d_time: int = 16
    d_hidden: int = 16       # per-direction width of the recurrent walk encoder
    encoder: str = "rnn"     # "rnn" (bidirectional LSTM) or "mean"
    aggregator: str = "mean"  # "mean" or "attention"
    walks: WalkConfig = WalkConfig()

    def __post_init__(self):
        if self.d_pos < 1 or self.d_time < 1:
            raise ValueError("d_pos and d_time must be >= 1")
        if self.encoder not in ("rnn", "mean"):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.aggregator not in ("mean", "attention"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")


# anonymization -----------------------------------------------------------------


def positional_frequency(w: int, S: WalkSet) -> np.ndarray:
    """Hit counts of node ``w`` at each walk position of ``S`` (padding ignored)."""
    L = len(S.walks[0].steps)
    g = np.zeros(L, dtype=np.int64)
    for walk in S.walks:
        for m, step in enumerate(walk.steps):
            if not step.pad and step.node == w:
                g[m] += 1
    return g


def anonymize(S_i: WalkSet, S_j: WalkSet) -> tuple[list[list[tuple]], list[list[tuple]]]:
    """Replace node ids by ``(g(w, own set), g(w, other set))`` pairs.

    Padded positions map to a pair of zero vectors.
    """
    if S_i.origin_time != S_j.origin_time:
        raise ValueError("walk sets must share their origin time")

    def convert(own: WalkSet, other: WalkSet):
        L = len(own.walks[0].steps)
        zero = np.zeros(L, dtype=np.int64)
        return [[(zero, zero) if s.pad else (positional_frequency(s.node, own), positional_frequency(s.node, other))
                 for s in walk.steps] for walk in own.walks]

    return convert(S_i, S_j), convert(S_j, S_i)


def cross_frequencies(query: np.ndarray, ref: np.ndarray, ref_valid: np.ndarray, n_nodes: int) -> np.ndarray:
    """Vectorised ``g(query[p, k, m], S_ref[p])``.

    ``query`` and ``ref`` are ``[P, K, L]`` node arrays; the result has shape
    ``[P, K, L, L]`` where the last axis is the walk position being counted.
    """
    P, K, L = ref.shape
    pair = np.arange(P, dtype=np.int64)[:, None, None]
    m = np.arange(L, dtype=np.int64)[None, None, :]
    ref_keys = ((pair * n_nodes + ref) * L + m)[ref_valid]
    uniq, counts = np.unique(ref_keys, return_counts=True)
    base = (pair * n_nodes + query) * L
    probe = base[..., None] + np.arange(L, dtype=np.int64)
    out = np.zeros(probe.shape, dtype=np.float64)
    if len(uniq):
        idx = np.searchsorted(uniq, probe)
        idx_c = np.minimum(idx, len(uniq) - 1)
        hit = uniq[idx_c] == probe
        out[hit] = counts[idx_c[hit]]
    return out


# generator ----------------------------------------------------------------------


class NEFGenerator(Module):
    """Trainable map from node pairs at a time to fixed-width edge features."""

    def __init__(self, cfg: NEFConfig, node_feat_dim: int, edge_feat_dim: int, rng: np.random.Generator):
        self.cfg = cfg
        L = cfg.walks.M + 1
        self.f1 = MLP([L, cfg.d_pos, cfg.d_pos], rng)
        self.f2 = TimeEncoder(cfg.d_time)
        self.d_x = node_feat_dim + edge_feat_dim
        self.d_step = cfg.d_pos + cfg.d_time + self.d_x
        if cfg.encoder == "rnn":
            self.encoder = BiLSTM(self.d_step, cfg.d_hidden, rng)
            self.dim = 2 * cfg.d_hidden
        else:
            self.encoder = None
            self.dim = self.d_step
        # decay rate; when unset it is fixed from the first adjacency seen
        self.alpha = cfg.walks.alpha
        if cfg.aggregator == "attention":
            self.q = Linear(self.dim, self.dim, rng, bias=False)
            self.k = Linear(self.d_step, self.dim, rng, bias=False)
            self.v = Linear(self.d_step, self.dim, rng, bias=False)

    def walk_config(self, adj: TemporalAdjacency) -> WalkConfig:
        if self.alpha is None:
            self.alpha = self.cfg.walks.resolve_alpha(adj)
        return replace(self.cfg.walks, alpha=self.alpha)

    # step and walk encoders ---------------------------------------------------

    def encode_steps(self, g_own: np.ndarray, g_other: np.ndarray, dt: np.ndarray,
                     x: np.ndarray, valid: np.ndarray) -> Tensor:
        """``concat(MLP(g_own) + MLP(g_other), f2(dt), X)``, zero on padding.

        Leading dims are arbitrary; ``g_*`` end in ``L``, ``x`` in ``d_x``.
        """
        f1 = self.position_embedding(g_own) + self.position_embedding(g_other)
        h = T.concat([f1, self.f2(dt), Tensor(x)], axis=-1)
        return h * valid[..., None].astype(np.float64)

    def position_embedding(self, g: np.ndarray) -> Tensor:
        """Shared MLP over count vectors, evaluated once per distinct vector."""
        L = g.shape[-1]
        flat = g.reshape(-1, L).astype(np.int64)
        base = int(flat.max(initial=0)) + 1
        keys = flat @ (base ** np.arange(L, dtype=np.int64))
        _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        emb = self.f1(Tensor(flat[first].astype(np.float64)))
        return T.reshape(emb[inverse.reshape(-1)], g.shape[:-1] + (emb.shape[-1],))

    def encode_walks(self, h: Tensor, valid: np.ndarray) -> Tensor:
        """``h[W, L, d_step]`` -> ``[W, dim]``; all-padded walks give zeros."""
        if self.encoder is not None:
            return self.encoder(h, valid)
        w = valid.astype(np.float64)
        n = np.maximum(w.sum(axis=1, keepdims=True), 1.0)
        return (h * w[..., None]).sum(axis=1) * (1.0 / n)

    def aggregate(self, enc: Tensor, h: Tensor | None = None, valid: np.ndarray | None = None) -> Tensor:
        """Per-walk ``agg(enc(W))``: identity, or attention over the walk's steps.

        In attention mode the walk encoding is the query and the masked step
        encodings ``h[W, L, d_step]`` supply keys and values.
        """
        if self.cfg.aggregator == "mean":
            return enc
        out, _ = T.masked_attention(self.q(enc), self.k(h), self.v(h), valid)
        return out

    # full pipeline ----------------------------------------------------------------

    def step_inputs(self, adj: TemporalAdjacency, walks_i: WalkBatch, walks_j: WalkBatch):
        """Anonymized numeric inputs for pairs; both walk sets stacked on axis 1."""
        n = adj.node_count
        own_i = cross_frequencies(walks_i.nodes, walks_i.nodes, walks_i.valid, n)
        oth_i = cross_frequencies(walks_i.nodes, walks_j.nodes, walks_j.valid, n)
        own_j = cross_frequencies(walks_j.nodes, walks_j.nodes, walks_j.valid, n)
        oth_j = cross_frequencies(walks_j.nodes, walks_i.nodes, walks_i.valid, n)
        g_own = np.concatenate([own_i, own_j], axis=1)
        g_oth = np.concatenate([oth_i, oth_j], axis=1)
        nodes = np.concatenate([walks_i.nodes, walks_j.nodes], axis=1)
        pos = np.concatenate([walks_i.pos, walks_j.pos], axis=1)
        valid = np.concatenate([walks_i.valid, walks_j.valid], axis=1)
        dt = np.concatenate([walks_i.dt, walks_j.dt], axis=1)
        parts = [adj.node_features.values[nodes]]
        ef = adj.log.edge_features
        if ef.shape[1]:
            e = np.where((pos >= 0)[..., None], ef[np.maximum(pos, 0)], 0.0)
            parts.append(e)
        x = np.concatenate(parts, axis=-1) if parts else np.zeros(nodes.shape + (0,))
        x = x * valid[..., None]
        return g_own, g_oth, dt, x, valid

    def from_walks(self, adj: TemporalAdjacency, walks_i: WalkBatch, walks_j: WalkBatch) -> Tensor:
        g_own, g_oth, dt, x, valid = self.step_inputs(adj, walks_i, walks_j)
        P, W, L = valid.shape
        # walks repeating the same events within one side of one pair encode identically
        K = walks_i.nodes.shape[1]
        pos = np.concatenate([walks_i.pos, walks_j.pos], axis=1).reshape(P * W, L)
        pair = np.repeat(np.arange(P), W)
        side = np.tile(np.arange(W) >= K, P)
        rep, inverse = group_rows([pair, side] + [pos[:, m] for m in range(1, L)])
        flat = lambda a: a.reshape((P * W,) + a.shape[2:])[rep]  # noqa: E731
        v = flat(valid)
        h = self.encode_steps(flat(g_own), flat(g_oth), flat(dt), flat(x), v)
        per_walk = self.aggregate(self.encode_walks(h, v), h, v)
        # mean over all 2K walks of each pair, duplicates included
        return T.reshape(per_walk[inverse], (P, W, self.dim)).mean(axis=1)

    def __call__(self, adj: TemporalAdjacency, src, dst, times) -> Tensor:
        """NEF vectors ``[P, dim]`` for pairs ``(src[p], dst[p])`` at ``times[p]``."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        if len(src) == 0:
            return Tensor(np.zeros((0, self.dim)))
        nodes = np.concatenate([src, dst])
        qt = np.concatenate([times, times])
        first, inverse = group_rows([nodes, qt.view(np.int64)], keep_order=True)
        batch = sample_walks(adj, nodes[first], qt[first], self.walk_config(adj))
        P = len(src)
        return self.from_walks(adj, batch.take(inverse[:P]), batch.take(inverse[P:]))


def group_rows(columns, keep_order: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Group equal rows of integer ``columns``.

    Returns ``(rep, inverse)`` with ``rows[rep][inverse] == rows``. Groups are
    ordered lexicographically, or by first appearance with ``keep_order``.
    """
    order = np.lexsort(columns[::-1])
    n = len(order)
    new = np.ones(n, dtype=bool)
    for col in columns:
        c = np.asarray(col)[order]
        new[1:] &= c[1:] == c[:-1]
    new = ~new
    new[0] = True
    gid_sorted = np.cumsum(new) - 1
    inverse = np.empty(n, dtype=np.int64)
    inverse[order] = gid_sorted
    rep = order[new]
    if keep_order:
        # lexsort is stable, so each group's representative is its first occurrence
        by_first = np.argsort(rep, kind="stable")
        rank = np.empty_like(by_first)
        rank[by_first] = np.arange(len(rep))
        rep, inverse = rep[by_first], rank[inverse]
    return rep, inverse
