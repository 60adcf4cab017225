"""Time-inverse walk sampling with exponential recency bias.

From node ``w`` at time ``tau`` the next step picks one of ``w``'s incidences
with timestamp strictly below ``tau``, with probability proportional to
``exp(alpha * (t_event - tau))``. The draw uses a per-node running
log-sum-exp table, so one step costs a binary search instead of a pass over
the node's full history.

Randomness comes from counter-based hashing: the uniform used for walk ``k``,
step ``m`` of a walk set is a pure function of ``(seed, node anchor, origin
time, k, m)``. Walk sets are therefore reproducible, independent of batch
composition or evaluation order, and unchanged by relabelling node ids.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import TemporalAdjacency

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def stream_keys(seed: int, anchors: np.ndarray, times: np.ndarray) -> np.ndarray:
    anchors = np.asarray(anchors, dtype=np.int64).astype(np.uint64)
    tbits = np.ascontiguousarray(times, dtype=np.float64).view(np.uint64)
    with np.errstate(over="ignore"):
        h = _mix(np.full(anchors.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF)) + _GOLDEN)
        h = _mix(h ^ anchors)
        return _mix(h ^ tbits)


def stream_uniforms(keys: np.ndarray, n_walks: int, n_steps: int) -> np.ndarray:
    """Uniforms in (0, 1) of shape ``keys.shape + (n_walks, n_steps)``."""
    counter = np.arange(1, n_walks * n_steps + 1, dtype=np.uint64).reshape(n_walks, n_steps)
    with np.errstate(over="ignore"):
        bits = _mix(keys[..., None, None] ^ (counter * _GOLDEN))
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


@dataclass(frozen=True)
class WalkConfig:
    K: int = 32
    M: int = 2
    alpha: float | None = None  # None: 4 / mean per-node inter-event time
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.alpha is not None and self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    def resolve_alpha(self, adj: TemporalAdjacency) -> float:
        return float(self.alpha) if self.alpha is not None else 4.0 / adj.mean_interevent_time()


@dataclass
class WalkBatch:
    """``Q`` walk sets of ``K`` walks with ``M + 1`` positions each.

    Step 0 is the start node at the origin time. ``pos`` indexes the event row
    in ``adj.log`` taken to reach a step (-1 for step 0 and padding).
    """

    nodes: np.ndarray   # [Q, K, M+1]
    times: np.ndarray   # [Q, K, M+1]
    pos: np.ndarray     # [Q, K, M+1]
    valid: np.ndarray   # [Q, K, M+1] bool

    @property
    def dt(self) -> np.ndarray:
        """Time since the previous position (0 at step 0 and on padding)."""
        out = np.zeros_like(self.times)
        out[..., 1:] = self.times[..., :-1] - self.times[..., 1:]
        return np.where(self.valid, out, 0.0)

    def take(self, index) -> "WalkBatch":
        return WalkBatch(self.nodes[index], self.times[index], self.pos[index], self.valid[index])


def _step(adj: TemporalAdjacency, logcum: np.ndarray, cur: np.ndarray, tau: np.ndarray,
          u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One backward step for flat arrays of walkers; returns (csr row, alive)."""
    cnt = adj.count_before(cur, tau)
    alive = cnt > 0
    start = adj.indptr[cur]
    last = start + cnt - 1
    row = np.full(cur.shape, -1, dtype=np.int64)
    if not alive.any():
        return row, alive
    s, e, uu = start[alive], last[alive], u[alive]
    target = np.log(uu) + logcum[e]
    lo, hi = s.copy(), e.copy()
    # smallest row in [s, e] with logcum[row] >= target
    while True:
        active = lo < hi
        if not active.any():
            break
        mid = (lo + hi) // 2
        right = active & (logcum[mid] < target)
        lo = np.where(right, mid + 1, lo)
        hi = np.where(active & ~right, mid, hi)
    row[alive] = lo
    return row, alive


def sample_walks(adj: TemporalAdjacency, nodes, times, cfg: WalkConfig,
                 uniforms: np.ndarray | None = None) -> WalkBatch:
    """Sample ``cfg.K`` walks for every ``(node, time)`` query.

    ``uniforms`` (shape ``[Q, K, M]``) overrides the hashed streams.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    Q, K, L = len(nodes), cfg.K, cfg.M + 1
    if uniforms is None:
        keys = stream_keys(cfg.seed, adj.anchors()[nodes], times)
        uniforms = stream_uniforms(keys, K, cfg.M)
    logcum = adj.log_cumulative_weights(cfg.resolve_alpha(adj))

    out_nodes = np.empty((Q, K, L), dtype=np.int64)
    out_times = np.zeros((Q, K, L))
    out_pos = np.full((Q, K, L), -1, dtype=np.int64)
    valid = np.zeros((Q, K, L), dtype=bool)
    cur = np.repeat(nodes, K)
    tau = np.repeat(times, K)
    alive = np.ones(Q * K, dtype=bool)
    out_nodes[..., 0] = cur.reshape(Q, K)
    out_times[..., 0] = tau.reshape(Q, K)
    valid[..., 0] = True
    for m in range(1, L):
        row, ok = _step(adj, logcum, cur, tau, uniforms[..., m - 1].reshape(-1))
        ok &= alive
        if ok.any():
            r = np.maximum(row, 0)
            nxt = np.where(ok, adj.neighbor[r], cur)
            tnext = np.where(ok, adj.time[r], tau)
            out_pos[..., m] = np.where(ok, adj.pos[r], -1).reshape(Q, K)
        else:
            nxt, tnext = cur, tau
        out_nodes[..., m] = nxt.reshape(Q, K)
        out_times[..., m] = np.where(ok, tnext, 0.0).reshape(Q, K)
        valid[..., m] = ok.reshape(Q, K)
        cur, tau, alive = nxt, tnext, ok
    return WalkBatch(out_nodes, out_times, out_pos, valid)


# single-walk views ------------------------------------------------------------


@dataclass(frozen=True)
class WalkStep:
    node: int
    t: float
    edge_features: np.ndarray
    node_features: np.ndarray
    pad: bool


@dataclass(frozen=True)
class Walk:
    origin_time: float
    steps: tuple[WalkStep, ...]


@dataclass(frozen=True)
class WalkSet:
    owner: int
    origin_time: float
    walks: tuple[Walk, ...]


def _to_walks(adj: TemporalAdjacency, batch: WalkBatch, q: int) -> tuple[Walk, ...]:
    nf, ef = adj.node_features.values, adj.log.edge_features
    walks = []
    for k in range(batch.nodes.shape[1]):
        steps = []
        for m in range(batch.nodes.shape[2]):
            ok = bool(batch.valid[q, k, m])
            p = batch.pos[q, k, m]
            w = int(batch.nodes[q, k, m])
            steps.append(WalkStep(
                node=w, t=float(batch.times[q, k, m]),
                edge_features=ef[p] if ok and p >= 0 else np.zeros(ef.shape[1]),
                node_features=nf[w] if ok else np.zeros(nf.shape[1]),
                pad=not ok))
        walks.append(Walk(float(batch.times[q, k, 0]), tuple(steps)))
    return tuple(walks)


def sample_walk(adj: TemporalAdjacency, start: int, t: float, cfg: WalkConfig,
                rng: np.random.Generator) -> Walk:
    """One walk driven by an explicit generator (used for Monte-Carlo checks)."""
    one = WalkConfig(K=2, M=cfg.M, alpha=cfg.alpha, seed=cfg.seed)
    u = rng.random((1, 2, cfg.M))
    batch = sample_walks(adj, [start], [t], one, uniforms=u)
    return _to_walks(adj, batch, 0)[0]


def sample_walk_set(adj: TemporalAdjacency, node: int, t: float, cfg: WalkConfig) -> WalkSet:
    batch = sample_walks(adj, [node], [t], cfg)
    return WalkSet(int(node), float(t), _to_walks(adj, batch, 0))
