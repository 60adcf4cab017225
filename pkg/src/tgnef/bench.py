"""Masking, splits, the four evaluation tasks and multi-seed reports."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .decoders import NodeDecoder
from .graph import EventLog, NodeFeatures
from .metrics import auc_roc, average_precision
from .nn import Adam, config_hash
from .tgn import TGN, ModelConfig
from .training import StreamData, TrainConfig, _batches, stream_scores, train

log = logging.getLogger(__name__)

TASKS = ("transductive-edge", "inductive-edge", "transductive-node", "inductive-node")
MASK_ALIASES = {"none": 0.0, "lean": 0.10, "10%": 0.10, "strict": 0.75, "75%": 0.75}


def mask_fraction(value) -> float:
    """Accepts a float or one of the aliases ``lean`` / ``strict`` / ``10%`` / ``75%``."""
    if isinstance(value, str):
        key = value.strip().lower()
        if key in MASK_ALIASES:
            return MASK_ALIASES[key]
        value = float(key.rstrip("%")) / 100 if key.endswith("%") else float(key)
    return float(value)


@dataclass(frozen=True)
class MaskSpec:
    node_mask_frac: float = 0.0
    edge_mask_frac: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("node_mask_frac", "edge_mask_frac"):
            frac = mask_fraction(getattr(self, name))
            if not 0.0 <= frac < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {frac}")
            object.__setattr__(self, name, frac)


@dataclass(frozen=True)
class ExperimentSpec:
    task: str = "transductive-edge"
    mask: MaskSpec = MaskSpec()
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    n_runs: int = 10
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    seed: int = 0
    bipartite: bool = False
    both_unseen: bool = False      # inductive: require both endpoints unseen
    node_epochs: int = 50          # node-decoder epochs for node tasks

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if len(self.fractions) != 3 or min(self.fractions) < 0 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {self.fractions}")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")

    @property
    def inductive(self) -> bool:
        return self.task.startswith("inductive")

    @property
    def node_task(self) -> bool:
        return self.task.endswith("node")

    def resolved(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.resolved())


@dataclass
class RunReport:
    spec_hash: str
    task: str
    runs: list[dict] = field(default_factory=list)  # seed, auc, ap, epochs, best_epoch
    runtimes: list[float] = field(default_factory=list)

    def _stat(self, key: str) -> tuple[float, float]:
        vals = np.array([r[key] for r in self.runs], dtype=np.float64)
        return float(vals.mean()), float(vals.std())  # population std

    @property
    def mean_auc(self) -> float:
        return self._stat("auc")[0]

    @property
    def std_auc(self) -> float:
        return self._stat("auc")[1]

    @property
    def mean_ap(self) -> float:
        return self._stat("ap")[0]

    @property
    def std_ap(self) -> float:
        return self._stat("ap")[1]

    def records(self) -> str:
        """One JSON record per seed plus a summary record; free of wall times."""
        lines = [json.dumps({"config_hash": self.spec_hash, "task": self.task, **r}, sort_keys=True) for r in self.runs]
        lines.append(json.dumps({"config_hash": self.spec_hash, "task": self.task, "summary": True,
                                 "n_runs": len(self.runs), "auc_mean": self.mean_auc, "auc_std": self.std_auc,
                                 "ap_mean": self.mean_ap, "ap_std": self.std_ap}, sort_keys=True))
        return "\n".join(lines) + "\n"


def format_table(rows: list[tuple[str, RunReport]]) -> str:
    """Aligned text table: one row per named report, mean ± std per metric."""
    header = ("setting", "task", "AUC", "AP", "runs")
    body = [(name, r.task, f"{r.mean_auc:.3f} ± {r.std_auc:.3f}", f"{r.mean_ap:.3f} ± {r.std_ap:.3f}",
             str(len(r.runs))) for name, r in rows]
    widths = [max(len(x[i]) for x in [header, *body]) for i in range(len(header))]
    fmt = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()  # noqa: E731
    return "\n".join([fmt(header), fmt(tuple("-" * w for w in widths)), *map(fmt, body)]) + "\n"


# splits and masks ----------------------------------------------------------------------


def chrono_split(events: EventLog, fractions=(0.8, 0.1, 0.1)) -> tuple[EventLog, EventLog, EventLog]:
    """Contiguous train/val/test pieces by event count."""
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"invalid split fractions {fractions}")
    n = len(events)
    n_train = int(round(fractions[0] * n))
    n_val = int(round((fractions[0] + fractions[1]) * n)) - n_train
    sizes = (n_train, n_val, n - n_train - n_val)
    if any(f > 0 and k == 0 for f, k in zip(fractions, sizes)):
        raise ValueError(f"too few events ({n}) for split fractions {fractions}")
    cut = np.cumsum(sizes)
    idx = np.arange(n)
    return events.select(idx[:cut[0]]), events.select(idx[cut[0]:cut[1]]), events.select(idx[cut[1]:])


def apply_node_mask(train: EventLog, frac: float, rng: np.random.Generator,
                    universe: np.ndarray | None = None) -> tuple[EventLog, np.ndarray]:
    """Hide ``round(frac * |V|)`` uniformly chosen nodes and all their events.

    ``universe`` defaults to the nodes of ``train``.
    """
    universe = train.nodes() if universe is None else np.unique(universe)
    k = int(round(frac * len(universe)))
    masked = np.sort(rng.choice(universe, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
    keep = ~(np.isin(train.src, masked) | np.isin(train.dst, masked))
    if len(train) and not keep.any():
        raise ValueError("node mask removes every training event")
    return train.select(keep), masked


def apply_edge_mask(train: EventLog, frac: float, rng: np.random.Generator) -> EventLog:
    """Keep ``round((1 - frac) * |train|)`` uniformly chosen training events."""
    n_keep = int(round((1.0 - frac) * len(train)))
    if len(train) and n_keep == 0:
        raise ValueError("edge mask removes every training event")
    return train.select(np.sort(rng.choice(len(train), size=n_keep, replace=False)))


def destination_universe(events: EventLog, bipartite: bool) -> np.ndarray:
    return np.unique(events.dst) if bipartite else events.nodes()


def _uniform(universe: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(universe) < 2:
        raise ValueError("negative sampling needs at least two candidate destinations")
    return universe[rng.integers(0, len(universe), n)]


def prepare(spec: ExperimentSpec, events: EventLog, node_features: NodeFeatures | None,
            seed: int) -> StreamData:
    """Split, mask and fix evaluation negatives for one run."""
    rng = np.random.default_rng(seed)
    node_features = node_features if node_features is not None else NodeFeatures.empty(events.node_count)
    train, val, test = chrono_split(events, spec.fractions)
    train, masked = apply_node_mask(train, spec.mask.node_mask_frac, rng, universe=events.nodes())
    train = apply_edge_mask(train, spec.mask.edge_mask_frac, rng)
    if not spec.inductive and len(masked):
        val = val.select(~(np.isin(val.src, masked) | np.isin(val.dst, masked)))
        test = test.select(~(np.isin(test.src, masked) | np.isin(test.dst, masked)))
    seen = train.nodes()
    allowed = destination_universe(events, spec.bipartite)
    train_universe = np.intersect1d(allowed, seen)

    def score_mask(ev: EventLog) -> np.ndarray:
        if spec.node_task:
            return ev.labels >= 0
        s_seen, d_seen = np.isin(ev.src, seen), np.isin(ev.dst, seen)
        if not spec.inductive:
            return s_seen & d_seen
        return (~s_seen & ~d_seen) if spec.both_unseen else (~s_seen | ~d_seen)

    return StreamData(train, val, test, node_features, train_universe,
                      eval_negatives(spec, val, allowed, seen, rng), eval_negatives(spec, test, allowed, seen, rng),
                      score_mask(val), score_mask(test))


def eval_negatives(spec: ExperimentSpec, ev: EventLog, allowed: np.ndarray, seen: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """Fixed negative destinations for one evaluation split.

    Transductive negatives come from the seen allowed nodes. Inductive
    negatives keep the pair's unseen endpoint: the source is reused as usual,
    and when only the destination is unseen the replacement is an unseen
    node too, so negatives and positives share the same seen/unseen mix.
    """
    seen_allowed = np.intersect1d(allowed, seen)
    if not spec.inductive:
        return _uniform(seen_allowed, len(ev), rng)
    neg = _uniform(allowed, len(ev), rng)
    unseen_allowed = np.setdiff1d(allowed, seen)
    only_dst = np.isin(ev.src, seen) & ~np.isin(ev.dst, seen)
    if spec.both_unseen:
        only_dst = np.ones(len(ev), dtype=bool)
    if only_dst.any() and len(unseen_allowed) >= 2:
        neg[only_dst] = _uniform(unseen_allowed, int(only_dst.sum()), rng)
    return neg


# node classification -------------------------------------------------------------------


def label_embeddings(model: TGN, data: StreamData, batch_size: int) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Source embeddings at the time of every labeled event, per split.

    Replays the full stream with frozen weights; embeddings of a batch are
    taken after the flush and before the batch is stored.
    """
    model.eval()
    out = {}
    with T.no_grad():
        model.attach(data.eval_adj)
        model.reset_state()
        for name, ev in (("train", data.train), ("val", data.val), ("test", data.test)):
            zs, ys = [], []
            for sl in _batches(len(ev), batch_size):
                updated, rows = model.flush()
                lab = np.flatnonzero(ev.labels[sl] >= 0) + sl.start
                if len(lab):
                    z = model.compute_embeddings(ev.src[lab], ev.t[lab], model.memory_tensor(updated, rows))
                    zs.append(z.data)
                    ys.append(ev.labels[lab])
                model.store_events(ev.src[sl], ev.dst[sl], ev.t[sl], ev.edge_features[sl])
            d = model.cfg.embedding.d_emb
            out[name] = (np.concatenate(zs) if zs else np.zeros((0, d)),
                         np.concatenate(ys) if ys else np.zeros(0, dtype=np.int64))
    model.train()
    return out


def node_task_metrics(model: TGN, data: StreamData, spec: ExperimentSpec, seed: int) -> tuple[float, float]:
    """Train a node decoder on frozen training-label embeddings; AUC/AP on test."""
    emb = label_embeddings(model, data, spec.train.batch_size)
    z_tr, y_tr = emb["train"]
    z_te, y_te = emb["test"]
    src_seen = np.isin(data.test.src[data.test.labels >= 0], data.train.nodes())
    keep = ~src_seen if spec.inductive else src_seen
    z_te, y_te = z_te[keep], y_te[keep]
    if len(np.unique(y_tr)) < 2 or len(np.unique(y_te)) < 2:
        raise ValueError("node task needs both label classes in the train and test splits")
    n_classes = int(max(y_tr.max(), y_te.max())) + 1
    dec = NodeDecoder(model.cfg.embedding.d_emb, n_classes, np.random.default_rng(seed), dropout=model.cfg.dropout)
    opt = Adam(dec.parameters(), lr=spec.train.lr)
    # inverse-frequency weights keep the rare class from being ignored
    counts = np.bincount(y_tr, minlength=n_classes).astype(np.float64)
    w = (len(y_tr) / (n_classes * np.maximum(counts, 1)))[y_tr]
    onehot = np.eye(n_classes)[y_tr]
    for _ in range(spec.node_epochs):
        logp = T.log_softmax(dec.logits(T.Tensor(z_tr)), axis=-1)
        loss = -(logp * (onehot * w[:, None])).sum() * (1.0 / w.sum())
        opt.zero_grad()
        loss.backward()
        opt.step()
    dec.eval()
    with T.no_grad():
        p = dec(T.Tensor(z_te)).data[:, 1]
    y = (y_te == 1).astype(int)
    return auc_roc(p, y), average_precision(p, y)


# experiments ---------------------------------------------------------------------------


def run_seeds(spec: ExperimentSpec) -> list[int]:
    """Distinct per-run seeds derived from ``spec.seed``."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(spec.seed).spawn(spec.n_runs)]


def _edge_metrics(model: TGN, data: StreamData, spec: ExperimentSpec, batch_size: int) -> tuple[float, float]:
    pos, neg = data.scored("test", *stream_scores(model, data, batch_size)["test"])
    if len(pos) == 0:
        raise ValueError(f"no test pairs qualify for task {spec.task}")
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return auc_roc(scores, labels), average_precision(scores, labels)


def _seeded(spec: ExperimentSpec, run_seed: int) -> tuple[ModelConfig, TrainConfig]:
    model_seed, train_seed = (int(x) for x in np.random.SeedSequence(run_seed).generate_state(2) % 2**31)
    return replace(spec.model, seed=model_seed), replace(spec.train, seed=train_seed)


def run_once(spec: ExperimentSpec, events: EventLog, node_features: NodeFeatures | None,
             run_seed: int) -> tuple[dict, float]:
    t0 = time.perf_counter()
    data = prepare(spec, events, node_features, run_seed)
    model_cfg, train_cfg = _seeded(spec, run_seed)
    model = TGN(model_cfg, events.node_count, data.node_features.dim, events.edge_feature_dim)
    history = train(model, data, train_cfg)
    if spec.node_task:
        auc, ap = node_task_metrics(model, data, spec, run_seed)
    else:
        auc, ap = _edge_metrics(model, data, spec, train_cfg.batch_size)
    record = {"seed": run_seed, "auc": auc, "ap": ap, "epochs": len(history.epochs),
              "best_epoch": history.best_epoch, "n_test": int(data.test_score.sum())}
    return record, time.perf_counter() - t0


def control_once(spec: ExperimentSpec, events: EventLog, node_features: NodeFeatures | None,
                 run_seed: int) -> dict:
    """Edge-task metrics of the untrained model: same split, negatives and replay, random weights."""
    if spec.node_task:
        raise ValueError("the frozen-weights control is defined for edge tasks only")
    data = prepare(spec, events, node_features, run_seed)
    model_cfg, train_cfg = _seeded(spec, run_seed)
    model = TGN(model_cfg, events.node_count, data.node_features.dim, events.edge_feature_dim)
    auc, ap = _edge_metrics(model, data, spec, train_cfg.batch_size)
    return {"seed": run_seed, "auc": auc, "ap": ap}


def run_experiment(spec: ExperimentSpec, events: EventLog, node_features: NodeFeatures | None = None,
                   parallel: int = 1) -> RunReport:
    """``n_runs`` independent train+evaluate cycles; seeds may run in parallel."""
    seeds = run_seeds(spec)
    if parallel > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(parallel, len(seeds))) as pool:
            results = list(pool.map(run_once, [spec] * len(seeds), [events] * len(seeds),
                                    [node_features] * len(seeds), seeds))
    else:
        results = [run_once(spec, events, node_features, s) for s in seeds]
    report = RunReport(spec.hash(), spec.task)
    for record, wall in results:
        log.info("%s seed %d auc %.4f ap %.4f (%.1fs)", spec.task, record["seed"], record["auc"], record["ap"], wall)
        report.runs.append(record)
        report.runtimes.append(wall)
    return report
