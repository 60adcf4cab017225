"""Continuous-time event log and temporal adjacency."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class GraphError(ValueError):
    pass


class Event(NamedTuple):
    src: int
    dst: int
    t: float
    edge_features: np.ndarray
    event_id: int


@dataclass(frozen=True, eq=False)
class EventLog:
    """Time-sorted interaction stream.

    ``event_ids`` keeps each row's ordinal in the full chronological log, so
    filtered views (splits, masks) still refer to the original events.
    ``labels`` holds -1 where an event carries no label.
    """

    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    edge_features: np.ndarray
    node_count: int
    event_ids: np.ndarray = None
    labels: np.ndarray = None

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        t = np.asarray(self.t, dtype=np.float64)
        n = len(src)
        feats = np.asarray(self.edge_features, dtype=np.float64)
        if feats.size == 0:
            feats = np.zeros((n, feats.shape[1] if feats.ndim == 2 else 0))
        ids = np.arange(n) if self.event_ids is None else np.asarray(self.event_ids, dtype=np.int64)
        labels = np.full(n, -1, dtype=np.int64) if self.labels is None else np.asarray(self.labels, dtype=np.int64)
        if not (len(dst) == len(t) == len(feats) == len(ids) == len(labels) == n):
            raise GraphError("event arrays have inconsistent lengths")
        if n and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= self.node_count):
            raise GraphError(f"node id out of range [0, {self.node_count})")
        if n > 1 and np.any(np.diff(t) < 0):
            bad = int(np.argmax(np.diff(t) < 0)) + 1
            raise GraphError(f"timestamps decrease at event {bad}")
        if not np.all(np.isfinite(t)):
            raise GraphError("non-finite timestamp")
        for name, arr in (("src", src), ("dst", dst), ("t", t), ("edge_features", feats),
                          ("event_ids", ids), ("labels", labels)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_events(cls, events, node_count: int, edge_feature_dim: int = 0) -> "EventLog":
        """Build from ``(src, dst, t[, features])`` tuples, sorting stably by time."""
        rows = list(events)
        src = np.array([r[0] for r in rows], dtype=np.int64)
        dst = np.array([r[1] for r in rows], dtype=np.int64)
        t = np.array([r[2] for r in rows], dtype=np.float64)
        feats = np.array([list(r[3]) if len(r) > 3 else [] for r in rows], dtype=np.float64)
        feats = feats.reshape(len(rows), edge_feature_dim) if len(rows) else np.zeros((0, edge_feature_dim))
        order = np.argsort(t, kind="stable")
        return cls(src[order], dst[order], t[order], feats[order], node_count)

    def __len__(self) -> int:
        return len(self.src)

    @property
    def edge_feature_dim(self) -> int:
        return self.edge_features.shape[1]

    @property
    def t_max(self) -> float:
        return float(self.t[-1]) if len(self) else 0.0

    def event(self, i: int) -> Event:
        return Event(int(self.src[i]), int(self.dst[i]), float(self.t[i]),
                     self.edge_features[i], int(self.event_ids[i]))

    def __iter__(self):
        return (self.event(i) for i in range(len(self)))

    def select(self, index) -> "EventLog":
        """Sub-log of the rows picked by a boolean mask or sorted index array."""
        index = np.asarray(index)
        if index.dtype != bool:
            index = np.sort(index)
        return EventLog(self.src[index], self.dst[index], self.t[index], self.edge_features[index],
                        self.node_count, self.event_ids[index], self.labels[index])

    def snapshot_before(self, t: float) -> "EventLog":
        """View of the events with timestamp strictly below ``t``."""
        return self.select(np.arange(int(np.searchsorted(self.t, t, side="left"))))

    def concat(self, other: "EventLog") -> "EventLog":
        """Chronological merge of two logs over the same node universe."""
        key_t = np.concatenate([self.t, other.t])
        key_id = np.concatenate([self.event_ids, other.event_ids])
        order = np.lexsort((key_id, key_t))
        cat = lambda a, b: np.concatenate([a, b])[order]  # noqa: E731
        return EventLog(cat(self.src, other.src), cat(self.dst, other.dst), key_t[order],
                        cat(self.edge_features, other.edge_features), self.node_count,
                        key_id[order], cat(self.labels, other.labels))

    def nodes(self) -> np.ndarray:
        return np.unique(np.concatenate([self.src, self.dst]))


@dataclass(frozen=True, eq=False)
class NodeFeatures:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def empty(cls, node_count: int) -> "NodeFeatures":
        return cls(np.zeros((node_count, 0)))

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(eq=False)
class TemporalAdjacency:
    """Per-node, time-sorted incidence lists in CSR form.

    Every event appears twice, once under each endpoint; ``direction`` is 1
    where the owning node is the event source. ``pos`` indexes rows of ``log``.
    """

    log: EventLog
    node_features: NodeFeatures
    indptr: np.ndarray
    neighbor: np.ndarray
    time: np.ndarray
    pos: np.ndarray
    direction: np.ndarray
    _logcum: dict = field(default_factory=dict, repr=False)
    _anchors: np.ndarray | None = field(default=None, repr=False)

    @property
    def node_count(self) -> int:
        return self.log.node_count

    def degree(self, node) -> np.ndarray:
        node = np.asarray(node)
        return self.indptr[node + 1] - self.indptr[node]

    def _check(self, node) -> None:
        node = np.asarray(node)
        if node.size and (node.min() < 0 or node.max() >= self.node_count):
            raise GraphError(f"unknown node id in {node}")

    def count_before(self, nodes, times) -> np.ndarray:
        """Number of incidences of each node with timestamp strictly below ``times``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        lo = self.indptr[nodes].copy()
        hi = self.indptr[nodes + 1].copy()
        start = lo.copy()
        # vectorised lower_bound within each node's segment
        while True:
            active = lo < hi
            if not active.any():
                break
            mid = (lo + hi) // 2
            go_right = active & (self.time[np.minimum(mid, len(self.time) - 1)] < times)
            lo = np.where(go_right, mid + 1, lo)
            hi = np.where(active & ~go_right, mid, hi)
        return lo - start

    def neighbors_before(self, node: int, t: float, count: int) -> list[tuple[int, float, int, np.ndarray]]:
        """The ``count`` latest incidences of ``node`` strictly before ``t``, oldest first."""
        if count < 1:
            raise ValueError("count must be >= 1")
        self._check(node)
        start = self.indptr[node]
        k = int(self.count_before([node], [t])[0])
        rows = range(start + max(0, k - count), start + k)
        return [(int(self.neighbor[r]), float(self.time[r]), int(self.log.event_ids[self.pos[r]]),
                 self.log.edge_features[self.pos[r]]) for r in rows]

    def khop_neighborhood(self, node: int, t: float, k: int) -> set[int]:
        """Nodes reachable from ``node`` in at most ``k`` undirected hops over events before ``t``."""
        if k < 1:
            raise ValueError("k must be >= 1")
        self._check(node)
        seen = {node}
        frontier = deque([(node, 0)])
        while frontier:
            u, depth = frontier.popleft()
            if depth == k:
                continue
            start = self.indptr[u]
            n = int(self.count_before([u], [t])[0])
            for v in self.neighbor[start:start + n]:
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    frontier.append((v, depth + 1))
        seen.discard(node)
        return seen

    def recent_neighbors(self, nodes, times, n: int, window: int | None = None):
        """Up to ``n`` most recent distinct neighbours of each node strictly before its time.

        Each neighbour is represented by its latest incidence. Only the last
        ``window`` incidences are scanned (default ``max(4n, 32)``). Returns
        arrays ``(neighbor, time, pos, mask)`` of shape ``[B, n]``, newest first.
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        B = len(nodes)
        window = window or max(4 * n, 32)
        cnt = self.count_before(nodes, times)
        end = self.indptr[nodes] + cnt
        take = np.minimum(cnt, window)
        W = int(take.max(initial=0))
        nbr = np.zeros((B, n), dtype=np.int64)
        tm = np.zeros((B, n))
        pos = np.zeros((B, n), dtype=np.int64)
        mask = np.zeros((B, n), dtype=bool)
        if W == 0:
            return nbr, tm, pos, mask
        back = np.arange(W)
        rows = end[:, None] - 1 - back[None, :]           # newest first
        ok = back[None, :] < take[:, None]
        q_idx, r = np.nonzero(ok)
        rows = rows[ok]
        cand = self.neighbor[rows]
        # keep the first (newest) row per (query, neighbour)
        order = np.lexsort((r, cand, q_idx))
        q_s, c_s = q_idx[order], cand[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = (q_s[1:] != q_s[:-1]) | (c_s[1:] != c_s[:-1])
        keep = order[first]
        keep = keep[np.lexsort((r[keep], q_idx[keep]))]   # back to newest-first per query
        qk = q_idx[keep]
        starts = np.searchsorted(qk, np.arange(B))
        rank = np.arange(len(keep)) - starts[qk]
        sel = rank < n
        qk, rank, rk = qk[sel], rank[sel], rows[keep][sel]
        nbr[qk, rank] = self.neighbor[rk]
        tm[qk, rank] = self.time[rk]
        pos[qk, rank] = self.pos[rk]
        mask[qk, rank] = True
        return nbr, tm, pos, mask

    def log_cumulative_weights(self, alpha: float) -> np.ndarray:
        """Per-segment running ``logsumexp(alpha * time)``; cached per alpha."""
        if alpha not in self._logcum:
            out = np.empty_like(self.time)
            scaled = alpha * self.time
            for u in range(self.node_count):
                a, b = self.indptr[u], self.indptr[u + 1]
                if b > a:
                    out[a:b] = np.logaddexp.accumulate(scaled[a:b])
            self._logcum[alpha] = out
        return self._logcum[alpha]

    def anchors(self) -> np.ndarray:
        """Id-free node signature: ``2 * first-event ordinal + role`` (-1 if isolated).

        Used to key random streams so that relabelling nodes does not change them.
        """
        if self._anchors is None:
            first = self.indptr[:-1]
            has = self.indptr[1:] > first
            anchor = np.full(self.node_count, -1, dtype=np.int64)
            idx = first[has]
            anchor[has] = 2 * self.log.event_ids[self.pos[idx]] + (1 - self.direction[idx])
            self._anchors = anchor
        return self._anchors

    def mean_interevent_time(self) -> float:
        """Mean gap between consecutive incidences of the same node."""
        gaps = np.diff(self.time)
        same = np.ones(len(gaps), dtype=bool)
        cuts = self.indptr[1:-1]
        # a gap straddles two nodes' lists where a list boundary falls strictly inside the array
        same[cuts[(cuts > 0) & (cuts < len(self.time))] - 1] = False
        gaps = gaps[same & (gaps > 0)] if len(gaps) else gaps
        return float(gaps.mean()) if len(gaps) else 1.0


def build(events: EventLog, node_features: NodeFeatures | None = None) -> TemporalAdjacency:
    """Index ``events`` by node; each event is listed under both endpoints."""
    n = len(events)
    if node_features is None:
        node_features = NodeFeatures.empty(events.node_count)
    if node_features.values.shape[0] != events.node_count:
        raise GraphError("node feature rows != node_count")
    # interleave (src, dst) per event so a stable sort keeps chronological order
    owner = np.empty(2 * n, dtype=np.int64)
    other = np.empty(2 * n, dtype=np.int64)
    owner[0::2], owner[1::2] = events.src, events.dst
    other[0::2], other[1::2] = events.dst, events.src
    direction = np.tile(np.array([1, 0], dtype=np.int8), n)
    pos = np.repeat(np.arange(n), 2)
    order = np.argsort(owner, kind="stable")
    counts = np.bincount(owner, minlength=events.node_count)
    indptr = np.zeros(events.node_count + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return TemporalAdjacency(events, node_features, indptr, other[order], events.t[pos[order]],
                             pos[order], direction[order])
