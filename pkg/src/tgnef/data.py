"""Event CSV ingestion, synthetic motif streams and embedding export."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .graph import EventLog, NodeFeatures, build

MOTIFS = ("recurrence", "triadic", "random")


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """Events over dense ids plus the external id of every dense id.

    In bipartite mode sources occupy ``[0, n_sources)`` and the external ids
    carry a ``src:`` / ``dst:`` prefix so the two sides may reuse names.
    """

    events: EventLog
    node_features: NodeFeatures
    ids: list[str]
    bipartite: bool = False
    n_sources: int = 0

    @property
    def n_labeled_events(self) -> int:
        return int((self.events.labels > 0).sum())

    @property
    def n_labeled_nodes(self) -> int:
        return len(np.unique(self.events.src[self.events.labels > 0]))

    def index_of(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.ids)}


class _IdMap:
    def __init__(self, bipartite: bool):
        self.bipartite = bipartite
        self.src: dict[str, int] = {}
        self.dst: dict[str, int] = {}

    def add(self, s: str, d: str) -> None:
        if self.bipartite:
            self.src.setdefault(s, len(self.src))
            self.dst.setdefault(d, len(self.dst))
        else:
            self.src.setdefault(s, len(self.src))
            self.src.setdefault(d, len(self.src))

    def resolve(self, raw_src: list[str], raw_dst: list[str]) -> tuple[np.ndarray, np.ndarray, list[str]]:
        if not self.bipartite:
            src = np.array([self.src[s] for s in raw_src], dtype=np.int64)
            dst = np.array([self.src[d] for d in raw_dst], dtype=np.int64)
            return src, dst, list(self.src)
        off = len(self.src)
        src = np.array([self.src[s] for s in raw_src], dtype=np.int64)
        dst = np.array([off + self.dst[d] for d in raw_dst], dtype=np.int64)
        ids = [f"src:{s}" for s in self.src] + [f"dst:{d}" for d in self.dst]
        return src, dst, ids


def _assemble(raw_src, raw_dst, ts, labels, feats, bipartite: bool, n_feat: int) -> Dataset:
    ids = _IdMap(bipartite)
    for s, d in zip(raw_src, raw_dst):
        ids.add(s, d)
    src, dst, names = ids.resolve(raw_src, raw_dst)
    t = np.array(ts, dtype=np.float64)
    order = np.argsort(t, kind="stable")  # equal timestamps keep file order
    feats = np.array(feats, dtype=np.float64).reshape(len(t), n_feat)
    log = EventLog(src[order], dst[order], t[order], feats[order], len(names),
                   labels=np.array(labels, dtype=np.int64)[order])
    return Dataset(log, NodeFeatures.empty(len(names)), names, bipartite, len(ids.src) if bipartite else 0)


def load_event_csv(path: str | Path, bipartite: bool = False, write_mapping: bool = True) -> Dataset:
    """Read ``src,dst,timestamp,label,f1,f2,...`` rows after one header line.

    Labels may be empty (stored as -1). Feature arity must be constant.
    Writes ``<path>.ids`` with ``dense_id,external_id`` rows unless disabled.
    """
    path = Path(path)
    raw_src, raw_dst, ts, labels, feats = [], [], [], [], []
    n_feat = None
    with open(path, newline="") as fh:
        header = fh.readline()
        if not header.strip():
            raise DataError(f"{path}: missing header line")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise DataError(f"{path}:{lineno}: expected at least src,dst,timestamp")
            try:
                t = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable timestamp {parts[2]!r}") from None
            if not np.isfinite(t):
                raise DataError(f"{path}:{lineno}: non-finite timestamp {parts[2]!r}")
            label = parts[3].strip() if len(parts) > 3 else ""
            row = parts[4:]
            if n_feat is None:
                n_feat = len(row)
            elif len(row) != n_feat:
                raise DataError(f"{path}:{lineno}: ragged feature row ({len(row)} values, expected {n_feat})")
            try:
                feats.append([float(x) for x in row])
                labels.append(int(float(label)) if label else -1)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            raw_src.append(parts[0].strip())
            raw_dst.append(parts[1].strip())
            ts.append(t)
    data = _assemble(raw_src, raw_dst, ts, labels, feats, bipartite, n_feat or 0)
    if write_mapping:
        write_id_mapping(data, Path(str(path) + ".ids"))
    return data


def load_edge_list(path: str | Path, columns: dict, delimiter: str | None = ",", header: bool = True,
                   bipartite: bool = False) -> Dataset:
    """Adapter for other edge-list layouts.

    ``columns`` maps ``src``, ``dst``, ``t`` (and optionally ``label`` and a
    list ``features``) to column positions. ``delimiter=None`` splits on
    whitespace, as in the UCI message file.
    """
    for key in ("src", "dst", "t"):
        if key not in columns:
            raise DataError(f"columns mapping lacks {key!r}")
    unknown = set(columns) - {"src", "dst", "t", "label", "features"}
    if unknown:
        raise DataError(f"unknown column keys {sorted(unknown)}")
    fcols = list(columns.get("features", []))
    raw_src, raw_dst, ts, labels, feats = [], [], [], [], []
    with open(path) as fh:
        if header:
            fh.readline()
        for lineno, line in enumerate(fh, start=2 if header else 1):
            if not line.strip():
                continue
            parts = line.split(delimiter)
            try:
                raw_src.append(parts[columns["src"]].strip())
                raw_dst.append(parts[columns["dst"]].strip())
                ts.append(float(parts[columns["t"]]))
                lab = columns.get("label")
                labels.append(int(float(parts[lab])) if lab is not None and parts[lab].strip() else -1)
                feats.append([float(parts[c]) for c in fcols])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return _assemble(raw_src, raw_dst, ts, labels, feats, bipartite, len(fcols))


def write_event_csv(data: Dataset, path: str | Path) -> None:
    """Inverse of :func:`load_event_csv` (floats written with ``repr``)."""
    ev = data.events
    strip = (lambda s: s.split(":", 1)[1]) if data.bipartite else (lambda s: s)
    with open(path, "w", newline="") as fh:
        fh.write("user_id,item_id,timestamp,state_label,comma_separated_list_of_features\n")
        for i in range(len(ev)):
            label = "" if ev.labels[i] < 0 else str(int(ev.labels[i]))
            row = [strip(data.ids[ev.src[i]]), strip(data.ids[ev.dst[i]]), repr(float(ev.t[i])), label]
            row += [repr(float(x)) for x in ev.edge_features[i]]
            fh.write(",".join(row) + "\n")


def write_id_mapping(data: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for i, name in enumerate(data.ids):
            w.writerow([i, name])


def read_id_mapping(path: str | Path) -> list[str]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if [int(r[0]) for r in rows] != list(range(len(rows))):
        raise DataError(f"{path}: dense ids must be 0..n-1 in order")
    return [r[1] for r in rows]


# synthetic streams -------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_nodes: int = 2000
    n_events: int = 30000
    motif: str = "triadic"
    strength: float = 0.8
    seed: int = 0
    memory: int = 3    # recent partners remembered per node

    def __post_init__(self):
        if self.n_nodes < 3:
            raise DataError("synthetic graphs need at least 3 nodes")
        if self.motif not in MOTIFS:
            raise DataError(f"unknown motif {self.motif!r}; expected one of {MOTIFS}")
        if not 0.0 <= self.strength <= 1.0:
            raise DataError("strength must lie in [0, 1]")
        if self.n_events < 0 or self.memory < 1:
            raise DataError("n_events must be >= 0 and memory >= 1")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Random pairs interleaved with planted motif events.

    With probability ``strength`` an event follows the motif: ``recurrence``
    repeats a recent partner of a random active node; ``triadic`` joins a
    node to a recent partner of one of its recent partners. Otherwise (or
    when the motif has no candidate yet) the pair is uniform. Inter-arrival
    times are unit exponential.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_nodes
    recent: list[list[int]] = [[] for _ in range(n)]
    active: list[int] = []
    src = np.empty(spec.n_events, dtype=np.int64)
    dst = np.empty(spec.n_events, dtype=np.int64)
    motif = spec.motif if spec.motif != "random" else None
    for e in range(spec.n_events):
        pair = None
        if motif is not None and active and rng.random() < spec.strength:
            u = active[rng.integers(len(active))]
            w = recent[u][rng.integers(len(recent[u]))]
            if motif == "recurrence":
                pair = (u, w)
            else:
                cands = [v for v in recent[w] if v != u]
                if cands:
                    pair = (u, cands[rng.integers(len(cands))])
        if pair is None:
            u = int(rng.integers(n))
            v = int(rng.integers(n - 1))
            pair = (u, v + (v >= u))
        u, v = pair
        src[e], dst[e] = u, v
        for a, b in ((u, v), (v, u)):
            if not recent[a]:
                active.append(a)
            if b in recent[a]:
                recent[a].remove(b)
            recent[a].append(b)
            if len(recent[a]) > spec.memory:
                recent[a].pop(0)
    t = np.cumsum(rng.exponential(1.0, spec.n_events))
    log = EventLog(src, dst, t, np.zeros((spec.n_events, 0)), n)
    return Dataset(log, NodeFeatures.empty(n), [str(i) for i in range(n)])


def wedge_closure_rate(events: EventLog, memory: int = 3) -> float:
    """Fraction of events whose endpoints already shared a recent partner."""
    recent: list[list[int]] = [[] for _ in range(events.node_count)]
    closed = 0
    for u, v in zip(events.src.tolist(), events.dst.tolist()):
        if set(recent[u]) & set(recent[v]) - {u, v}:
            closed += 1
        for a, b in ((u, v), (v, u)):
            if b in recent[a]:
                recent[a].remove(b)
            recent[a].append(b)
            if len(recent[a]) > memory:
                recent[a].pop(0)
    return closed / max(len(events), 1)


# embedding export ------------------------------------------------------------------


def embeddings_at(model, events: EventLog, node_features: NodeFeatures, nodes, t: float,
                  batch_size: int = 200) -> np.ndarray:
    """Embeddings of ``nodes`` at time ``t`` after replaying events before ``t``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    past = events.snapshot_before(t)
    model.eval()
    with T.no_grad():
        model.attach(build(past, node_features))
        model.reset_state()
        for start in range(0, len(past), batch_size):
            sl = slice(start, start + batch_size)
            model.flush()
            model.store_events(past.src[sl], past.dst[sl], past.t[sl], past.edge_features[sl])
        updated, rows = model.flush()
        z = model.compute_embeddings(nodes, np.full(len(nodes), float(t)), model.memory_tensor(updated, rows))
    model.train()
    return z.data


def export_embeddings(model, data: Dataset, node_ids: list[str] | None, t: float, path: str | Path,
                      batch_size: int = 200) -> np.ndarray:
    """Write ``id,e0,...`` rows with 9 significant digits; returns the matrix."""
    index = data.index_of()
    names = list(data.ids) if node_ids is None else list(node_ids)
    unknown = [x for x in names if x not in index]
    if unknown:
        raise DataError(f"unknown node ids: {', '.join(unknown)}")
    z = embeddings_at(model, data.events, data.node_features, [index[x] for x in names], t, batch_size)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["id"] + [f"e{k}" for k in range(z.shape[1])]) + "\n")
        for name, row in zip(names, z):
            fh.write(",".join([name] + [f"{x:.9g}" for x in row]) + "\n")
    return z
