"""Memory-based temporal graph network with optional NEF inputs.

Per batch the model (1) flushes pending raw messages into node memory,
(2) embeds the batch nodes with temporal attention over recent neighbours,
and, once the caller is done with the batch, (3) stores the batch events as
new raw messages. With both NEF toggles off and the mean walk encoder the
model is a plain TGN.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .decoders import EdgeDecoder
from .graph import GraphError, TemporalAdjacency
from .nef import NEFConfig, NEFGenerator
from .nn import GRUCell, Linear, Module, TimeEncoder
from .tensor import Tensor


class MemoryUpdateError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmbeddingConfig:
    d_mem: int = 32
    d_emb: int = 32
    d_time: int = 16
    n_neighbors: int = 10
    hops: int = 1
    use_nef_in_messages: bool = True
    use_nef_in_embedding: bool = True
    aggregation: str = "mean"        # "mean" or "last"
    memory_init: str = "gaussian"    # "gaussian" or "zeros"

    def __post_init__(self):
        if self.hops < 1 or self.n_neighbors < 1:
            raise ValueError("hops and n_neighbors must be >= 1")
        if self.aggregation not in ("mean", "last"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.memory_init not in ("gaussian", "zeros"):
            raise ValueError(f"unknown memory_init {self.memory_init!r}")


@dataclass(frozen=True)
class ModelConfig:
    embedding: EmbeddingConfig = EmbeddingConfig()
    nef: NEFConfig = NEFConfig()
    dropout: float = 0.1
    seed: int = 0

    @property
    def uses_nef(self) -> bool:
        return self.embedding.use_nef_in_messages or self.embedding.use_nef_in_embedding


# state -----------------------------------------------------------------------------


class MemoryBank:
    """Per-node memory vectors and last-update times."""

    def __init__(self, n_nodes: int, d_mem: int, init: str = "gaussian", seed: int = 0):
        self.n_nodes, self.d_mem, self.init, self.seed = n_nodes, d_mem, init, seed
        self.reset()

    def reset(self) -> None:
        if self.init == "gaussian":
            self.memory = np.random.default_rng(self.seed).normal(0.0, 0.1, (self.n_nodes, self.d_mem))
        else:
            self.memory = np.zeros((self.n_nodes, self.d_mem))
        self.last_update = np.zeros(self.n_nodes)

    def set(self, nodes: np.ndarray, values: np.ndarray, times: np.ndarray) -> None:
        if np.any(times < self.last_update[nodes]):
            raise MemoryUpdateError("memory update would move a node's last-update time backwards")
        self.memory[nodes] = values
        self.last_update[nodes] = times

    def copy(self) -> "MemoryBank":
        other = MemoryBank.__new__(MemoryBank)
        other.__dict__.update(self.__dict__)
        other.memory = self.memory.copy()
        other.last_update = self.last_update.copy()
        return other


class RawMessage(NamedTuple):
    node: int
    other: int
    t: float
    edge_features: np.ndarray
    direction: int  # 1 when ``node`` was the event source


@dataclass
class MessageStore:
    """Pending raw messages, one record per (event, endpoint)."""

    edge_dim: int
    node: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    other: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    feats: np.ndarray = None
    direction: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))

    def __post_init__(self):
        if self.feats is None:
            self.feats = np.zeros((0, self.edge_dim))

    def __len__(self) -> int:
        return len(self.node)

    def store(self, node, other, t, feats, direction) -> None:
        """Record new messages; any older records of the same nodes are replaced."""
        node = np.asarray(node, dtype=np.int64)
        keep = ~np.isin(self.node, node)
        self.node = np.concatenate([self.node[keep], node])
        self.other = np.concatenate([self.other[keep], np.asarray(other, dtype=np.int64)])
        self.t = np.concatenate([self.t[keep], np.asarray(t, dtype=np.float64)])
        self.feats = np.concatenate([self.feats[keep], np.asarray(feats, dtype=np.float64).reshape(len(node), -1)])
        self.direction = np.concatenate([self.direction[keep], np.asarray(direction, dtype=np.int8)])

    def pending_for(self, node: int) -> list[RawMessage]:
        idx = np.flatnonzero(self.node == node)
        return [RawMessage(int(self.node[i]), int(self.other[i]), float(self.t[i]), self.feats[i],
                           int(self.direction[i])) for i in idx]

    def pop_all(self) -> "MessageStore":
        out = MessageStore(self.edge_dim, self.node, self.other, self.t, self.feats, self.direction)
        self.node = self.node[:0]
        self.other = self.other[:0]
        self.t = self.t[:0]
        self.feats = self.feats[:0]
        self.direction = self.direction[:0]
        return out

    def copy(self) -> "MessageStore":
        return MessageStore(self.edge_dim, self.node.copy(), self.other.copy(), self.t.copy(),
                            self.feats.copy(), self.direction.copy())


# functional pieces -------------------------------------------------------------------


def generate_message(s_i: Tensor, s_j: Tensor, dt, e_ij, time_encoder: TimeEncoder,
                     nef: Tensor | None = None) -> Tensor:
    """``concat(s_i, s_j, phi(t - t_last), e_ij[, NEF_ij])`` row-wise."""
    parts = [s_i, s_j, time_encoder(dt), T.as_tensor(e_ij)]
    if nef is not None:
        parts.append(nef)
    return T.concat(parts, axis=-1)


def aggregate_messages(msgs: Tensor, times: np.ndarray, segment: np.ndarray, n_segments: int,
                       mode: str = "mean") -> Tensor:
    """Reduce message rows per segment: componentwise mean, or the latest message."""
    if msgs.shape[0] == 0:
        raise ValueError("no messages to aggregate")
    segment = np.asarray(segment)
    if mode == "mean":
        counts = np.bincount(segment, minlength=n_segments).astype(np.float64)
        return T.segment_sum(msgs, segment, n_segments) * (1.0 / np.maximum(counts, 1.0))[:, None]
    if mode == "last":
        # latest time wins; ties go to the later record
        order = np.lexsort((np.arange(len(segment)), np.asarray(times), segment))
        last = np.ones(len(order), dtype=bool)
        last[:-1] = segment[order][1:] != segment[order][:-1]
        pick = np.empty(n_segments, dtype=np.int64)
        pick[segment[order][last]] = order[last]
        return msgs[pick]
    raise ValueError(f"unknown aggregation {mode!r}")


def update_memory(cell: GRUCell, aggregated: Tensor, memory: Tensor) -> Tensor:
    return cell(aggregated, memory)


# model --------------------------------------------------------------------------------


class _HopAttention(Module):
    def __init__(self, d_query: int, d_key: int, d_attn: int, d_out: int, rng: np.random.Generator):
        self.q = Linear(d_query, d_attn, rng, bias=False)
        self.k = Linear(d_key, d_attn, rng, bias=False)
        self.v = Linear(d_key, d_attn, rng, bias=False)
        self.out = Linear(d_attn, d_out, rng, bias=False)

    def __call__(self, query: Tensor, keys: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        attended, w = T.masked_attention(self.q(query), self.k(keys), self.v(keys), mask)
        return self.out(attended), w


class TGN(Module):
    """Temporal graph network; ``adj`` must be attached before use."""

    def __init__(self, cfg: ModelConfig, n_nodes: int, node_feat_dim: int, edge_feat_dim: int):
        self.cfg = cfg
        emb = cfg.embedding
        rng = np.random.default_rng(cfg.seed)
        self.n_nodes = n_nodes
        self.d_node, self.d_edge = node_feat_dim, edge_feat_dim
        self.nef = NEFGenerator(cfg.nef, node_feat_dim, edge_feat_dim, rng) if cfg.uses_nef else None
        d_nef = self.nef.dim if self.nef is not None else 0
        self.time_encoder = TimeEncoder(emb.d_time)
        self.msg_dim = 2 * emb.d_mem + emb.d_time + edge_feat_dim + (d_nef if emb.use_nef_in_messages else 0)
        self.memory_updater = GRUCell(self.msg_dim, emb.d_mem, rng)
        d_self = emb.d_mem + node_feat_dim
        d_key = emb.d_mem + node_feat_dim + edge_feat_dim + emb.d_time
        self.self_proj = Linear(d_self, emb.d_emb, rng)
        self.hop1 = _HopAttention(d_self + emb.d_time, d_key + (d_nef if emb.use_nef_in_embedding else 0),
                                  emb.d_emb, emb.d_emb, rng)
        self.hop2 = _HopAttention(d_self + emb.d_time, d_key, emb.d_emb, emb.d_emb, rng) if emb.hops >= 2 else None
        self.decoder = EdgeDecoder(emb.d_emb, rng, dropout=cfg.dropout)
        self.bank = MemoryBank(n_nodes, emb.d_mem, emb.memory_init, seed=cfg.seed + 1)
        self.store = MessageStore(edge_feat_dim)
        self.adj: TemporalAdjacency | None = None
        self.recorder: list | None = None

    # state management --------------------------------------------------------------

    def attach(self, adj: TemporalAdjacency) -> "TGN":
        if adj.node_count != self.n_nodes:
            raise GraphError("adjacency node count differs from the model's")
        self.adj = adj
        return self

    def reset_state(self) -> None:
        self.bank.reset()
        self.store = MessageStore(self.d_edge)

    def _record(self, what: str, nodes) -> None:
        if self.recorder is not None:
            self.recorder.append((what, np.unique(np.asarray(nodes))))

    def _node_feats(self, nodes: np.ndarray) -> Tensor:
        return Tensor(self.adj.node_features.values[nodes])

    # message path ---------------------------------------------------------------------

    def flush(self) -> tuple[np.ndarray, Tensor | None]:
        """Turn all pending messages into memory updates.

        Returns the updated node ids and their new memory rows (in the graph,
        so the updater receives gradients); the bank keeps detached copies.
        """
        pending = self.store.pop_all()
        if len(pending) == 0:
            self._record("flush", [])
            return np.zeros(0, dtype=np.int64), None
        self._record("flush", pending.node)
        nodes, seg = np.unique(pending.node, return_inverse=True)
        mem = self.bank.memory
        s_i = Tensor(mem[pending.node])
        s_j = Tensor(mem[pending.other])
        dt = pending.t - self.bank.last_update[pending.node]
        nef = None
        if self.cfg.embedding.use_nef_in_messages:
            nef = self.nef(self.adj, pending.node, pending.other, pending.t)
        msgs = generate_message(s_i, s_j, dt, pending.feats, self.time_encoder, nef)
        agg = aggregate_messages(msgs, pending.t, seg, len(nodes), self.cfg.embedding.aggregation)
        new = update_memory(self.memory_updater, agg, Tensor(mem[nodes]))
        t_new = np.full(len(nodes), -np.inf)
        np.maximum.at(t_new, seg, pending.t)
        self.bank.set(nodes, new.data, t_new)
        return nodes, new

    def store_events(self, src, dst, times, feats) -> None:
        """Write raw messages for both endpoints of every event."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        feats = np.asarray(feats, dtype=np.float64).reshape(len(src), -1)
        self._record("store", np.concatenate([src, dst]))
        n = len(src)
        self.store.store(np.concatenate([src, dst]), np.concatenate([dst, src]), np.concatenate([times, times]),
                         np.concatenate([feats, feats]), np.concatenate([np.ones(n), np.zeros(n)]))

    def memory_tensor(self, updated: np.ndarray, rows: Tensor | None) -> Tensor:
        if rows is None:
            return Tensor(self.bank.memory)
        return T.scatter_rows(self.bank.memory, updated, rows)

    # embedding path --------------------------------------------------------------------

    def compute_embeddings(self, nodes, times, memory: Tensor | None = None) -> Tensor:
        """``z_i(t)`` for every query; ``memory`` defaults to the bank contents."""
        emb = self.cfg.embedding
        nodes = np.asarray(nodes, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        self.adj._check(nodes)
        memory = memory if memory is not None else Tensor(self.bank.memory)
        self._record("embed", nodes)
        B, n = len(nodes), emb.n_neighbors
        s_i = memory[nodes]
        self_in = T.concat([s_i, self._node_feats(nodes)], axis=-1)
        z = self.self_proj(self_in)
        query = T.concat([self_in, self.time_encoder(np.zeros(B))], axis=-1)

        nbr, t_nbr, pos, mask = self.adj.recent_neighbors(nodes, times, n)
        if mask.any():
            keys = self._neighbor_keys(memory, nbr, t_nbr, pos, times)
            if emb.use_nef_in_embedding:
                q_idx, slot = np.nonzero(mask)
                nef = self.nef(self.adj, nodes[q_idx], nbr[q_idx, slot], times[q_idx])
                full = T.scatter_rows(np.zeros((B * n, nef.shape[1])), q_idx * n + slot, nef)
                keys = T.concat([keys, T.reshape(full, (B, n, nef.shape[1]))], axis=-1)
            out, _ = self.hop1(query, keys, mask)
            z = z + out
            if self.hop2 is not None:
                z = z + self._second_hop(memory, nodes, times, nbr, mask, query)
        return z

    def _neighbor_keys(self, memory: Tensor, nbr, t_nbr, pos, times) -> Tensor:
        B, n = nbr.shape
        flat = nbr.reshape(-1)
        parts = [T.reshape(memory[flat], (B, n, -1)), Tensor(self.adj.node_features.values[nbr])]
        if self.d_edge:
            parts.append(Tensor(self.adj.log.edge_features[pos]))
        parts.append(self.time_encoder(times[:, None] - t_nbr))
        return T.concat(parts, axis=-1)

    def _second_hop(self, memory, nodes, times, nbr, mask, query) -> Tensor:
        B, n = nbr.shape
        q_idx, slot = np.nonzero(mask)
        n2, t2, p2, m2 = self.adj.recent_neighbors(nbr[q_idx, slot], times[q_idx], n)
        # gather the second-hop candidates of each query, drop the query node, dedupe by node
        rows_q = np.repeat(q_idx, n)[m2.reshape(-1)]
        cand = n2.reshape(-1)[m2.reshape(-1)]
        ct = t2.reshape(-1)[m2.reshape(-1)]
        cp = p2.reshape(-1)[m2.reshape(-1)]
        keep = cand != nodes[rows_q]
        rows_q, cand, ct, cp = rows_q[keep], cand[keep], ct[keep], cp[keep]
        cap = n * n
        nb = np.zeros((B, cap), dtype=np.int64)
        tb = np.zeros((B, cap))
        pb = np.zeros((B, cap), dtype=np.int64)
        mb = np.zeros((B, cap), dtype=bool)
        if len(cand):
            order = np.lexsort((-ct, cand, rows_q))
            first = np.ones(len(order), dtype=bool)
            first[1:] = (rows_q[order][1:] != rows_q[order][:-1]) | (cand[order][1:] != cand[order][:-1])
            sel = order[first]
            sel = sel[np.lexsort((-ct[sel], rows_q[sel]))]
            rq = rows_q[sel]
            rank = np.arange(len(sel)) - np.searchsorted(rq, rq)
            ok = rank < cap
            sel, rq, rank = sel[ok], rq[ok], rank[ok]
            nb[rq, rank], tb[rq, rank], pb[rq, rank], mb[rq, rank] = cand[sel], ct[sel], cp[sel], True
        if not mb.any():
            return Tensor(np.zeros((B, self.cfg.embedding.d_emb)))
        keys = self._neighbor_keys(memory, nb, tb, pb, times)
        out, _ = self.hop2(query, keys, mb)
        return out

    # batch driver -------------------------------------------------------------------------

    def forward_batch(self, src, dst, times, neg_dst) -> tuple[Tensor, Tensor]:
        """Flush, then score positives ``(src, dst)`` and negatives ``(src, neg_dst)``.

        Returns edge logits. The caller stores the batch events afterwards with
        :meth:`store_events`.
        """
        src = np.asarray(src, dtype=np.int64)
        B = len(src)
        updated, rows = self.flush()
        memory = self.memory_tensor(updated, rows)
        nodes = np.concatenate([src, np.asarray(dst, dtype=np.int64), np.asarray(neg_dst, dtype=np.int64)])
        t3 = np.tile(np.asarray(times, dtype=np.float64), 3)
        z = self.compute_embeddings(nodes, t3, memory)
        z_src, z_dst, z_neg = z[:B], z[B:2 * B], z[2 * B:]
        return self.decoder.logits(z_src, z_dst), self.decoder.logits(z_src, z_neg)
