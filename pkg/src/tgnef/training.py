"""Chronological mini-batch training and streaming evaluation."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .graph import EventLog, NodeFeatures, build
from .metrics import auc_roc, average_precision
from .nn import Adam, config_hash, load_checkpoint, save_checkpoint
from .tgn import TGN, ModelConfig

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 200
    epochs: int = 10
    lr: float = 1e-3
    seed: int = 0
    patience: int = 3
    negatives: str = "uniform"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class BatchResult:
    loss: float
    auc: float
    ap: float
    wall: float


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auc: float
    val_ap: float
    wall: float


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_ap: float = float("-inf")

    def write_jsonl(self, path: str | Path, cfg_hash: str) -> None:
        """Metrics to ``path``; wall times go to ``<stem>.timings.jsonl`` so the metrics file is reproducible."""
        path = Path(path)
        with open(path, "w") as fh, open(path.with_suffix(".timings.jsonl"), "w") as tf:
            for rec in self.epochs:
                row = asdict(rec)
                wall = row.pop("wall")
                fh.write(json.dumps({"config_hash": cfg_hash, **row}) + "\n")
                tf.write(json.dumps({"config_hash": cfg_hash, "epoch": rec.epoch, "seconds": wall}) + "\n")


# negative sampling -------------------------------------------------------------------


def negative_sample(src: np.ndarray, dst: np.ndarray, universe: np.ndarray,
                    rng: np.random.Generator, max_tries: int = 100) -> np.ndarray:
    """One negative destination per positive, uniform over ``universe``.

    A draw that reproduces a positive pair of the same batch is redrawn.
    """
    universe = np.asarray(universe, dtype=np.int64)
    if len(universe) < 2:
        raise ValueError("negative sampling needs at least two candidate destinations")
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    neg = universe[rng.integers(0, len(universe), len(src))]
    positives = set(zip(src.tolist(), dst.tolist()))
    for _ in range(max_tries):
        clash = np.array([(s, d) in positives for s, d in zip(src.tolist(), neg.tolist())], dtype=bool)
        if not clash.any():
            break
        neg[clash] = universe[rng.integers(0, len(universe), int(clash.sum()))]
    return neg


# data bundle ---------------------------------------------------------------------------


@dataclass
class StreamData:
    """Logs for one run: the (masked) training stream plus val/test streams.

    Every val/test event updates memory; only rows flagged in ``val_score`` /
    ``test_score`` count towards metrics. ``train_universe`` holds the
    candidate negative destinations during training; evaluation negatives are
    drawn once and fixed in ``val_neg`` / ``test_neg``.
    """

    train: EventLog
    val: EventLog
    test: EventLog
    node_features: NodeFeatures
    train_universe: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    val_score: np.ndarray | None = None
    test_score: np.ndarray | None = None

    def __post_init__(self):
        if self.val_score is None:
            self.val_score = np.ones(len(self.val), dtype=bool)
        if self.test_score is None:
            self.test_score = np.ones(len(self.test), dtype=bool)
        if len(self.val_neg) != len(self.val) or len(self.test_neg) != len(self.test):
            raise ValueError("one evaluation negative per val/test event is required")
        self.train_adj = build(self.train, self.node_features)
        self.eval_adj = build(self.train.concat(self.val).concat(self.test), self.node_features)

    def scored(self, name: str, pos: np.ndarray, neg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        keep = self.val_score if name == "val" else self.test_score
        return pos[keep], neg[keep]


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _metrics(pos: np.ndarray, neg: np.ndarray) -> tuple[float, float]:
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    if len(pos) == 0 or len(neg) == 0:
        return float("nan"), float("nan")
    return auc_roc(scores, labels), average_precision(scores, labels)


# training ------------------------------------------------------------------------------


def train_epoch(model: TGN, data: StreamData, cfg: TrainConfig, opt: Adam,
                rng: np.random.Generator) -> list[BatchResult]:
    """One chronological pass over the training stream.

    Per batch: flush pending messages into memory, embed and score positives
    and negatives, take an optimiser step, then store the batch as messages.
    """
    model.train()
    model.attach(data.train_adj)
    model.reset_state()
    ev = data.train
    results = []
    for sl in _batches(len(ev), cfg.batch_size):
        t0 = time.perf_counter()
        src, dst, ts = ev.src[sl], ev.dst[sl], ev.t[sl]
        neg = negative_sample(src, dst, data.train_universe, rng)
        try:
            pos_logit, neg_logit = model.forward_batch(src, dst, ts, neg)
            labels = np.concatenate([np.ones(len(src)), np.zeros(len(src))])
            loss = T.bce_with_logits(T.concat([pos_logit, neg_logit]), labels)
        except T.NonFiniteError as exc:
            raise TrainingError(f"non-finite values in batch starting at event {sl.start}: {exc}") from exc
        if not np.isfinite(loss.item()):
            raise TrainingError(f"non-finite loss in batch starting at event {sl.start}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        model.store_events(src, dst, ts, ev.edge_features[sl])
        auc, ap = _metrics(pos_logit.data, neg_logit.data)
        results.append(BatchResult(loss.item(), auc, ap, time.perf_counter() - t0))
    return results


def stream_scores(model: TGN, data: StreamData, batch_size: int, score_test: bool = True):
    """Replay training events, then score val (and test) events chronologically.

    Runs without gradients and with dropout off. Every val/test event is
    scored before it enters memory. Returns ``{"val": (pos, neg), "test": ...}``
    with edge probabilities aligned to the logs' rows; unscored rows hold NaN.
    """
    model.eval()
    fix_walk_alpha(model, data)
    out = {}
    with T.no_grad():
        model.attach(data.eval_adj)
        model.reset_state()
        ev = data.train
        for sl in _batches(len(ev), batch_size):
            model.flush()
            model.store_events(ev.src[sl], ev.dst[sl], ev.t[sl], ev.edge_features[sl])
        parts = [("val", data.val, data.val_neg, data.val_score)]
        if score_test:
            parts.append(("test", data.test, data.test_neg, data.test_score))
        for name, ev, negs, score in parts:
            pos, neg = np.full(len(ev), np.nan), np.full(len(ev), np.nan)
            for sl in _batches(len(ev), batch_size):
                keep = np.flatnonzero(score[sl]) + sl.start
                if len(keep):
                    pl, nl = model.forward_batch(ev.src[keep], ev.dst[keep], ev.t[keep], negs[keep])
                    pos[keep], neg[keep] = T.sigmoid(pl).data, T.sigmoid(nl).data
                else:
                    model.flush()
                model.store_events(ev.src[sl], ev.dst[sl], ev.t[sl], ev.edge_features[sl])
            out[name] = (pos, neg)
    model.train()
    return out


def fix_walk_alpha(model: TGN, data: StreamData) -> None:
    """Pin an unset walk decay rate to the training stream's time scale."""
    if model.nef is not None:
        model.nef.walk_config(data.train_adj)


def train(model: TGN, data: StreamData, cfg: TrainConfig, checkpoint_dir: str | Path | None = None):
    """Train with early stopping on validation AP; restores the best weights.

    Returns the history. Validation replays the training stream with the
    current weights, so reloading the best checkpoint reproduces its val AP.
    """
    rng = np.random.default_rng(cfg.seed)
    fix_walk_alpha(model, data)
    opt = Adam(model.parameters(), lr=cfg.lr)
    history = History()
    best_state = None
    cfg_hash = config_hash({"model": asdict(model.cfg), "train": asdict(cfg)})
    stale = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        results = train_epoch(model, data, cfg, opt, rng)
        scores = stream_scores(model, data, cfg.batch_size, score_test=False)
        val_auc, val_ap = _metrics(*data.scored("val", *scores["val"]))
        rec = EpochRecord(epoch, float(np.mean([r.loss for r in results])) if results else float("nan"),
                          val_auc, val_ap, time.perf_counter() - t0)
        history.epochs.append(rec)
        log.info("epoch %d loss %.4f val auc %.4f ap %.4f (%.1fs)", epoch, rec.train_loss, val_auc, val_ap, rec.wall)
        score = val_ap if np.isfinite(val_ap) else -rec.train_loss
        if best_state is None or score > history.best_val_ap:
            history.best_val_ap, history.best_epoch = score, epoch
            best_state = model.state_dict()
            stale = 0
            if checkpoint_dir is not None:
                extra = {"epoch": epoch, "val_ap": val_ap, "walk_alpha": walk_alpha(model)}
                save_checkpoint(Path(checkpoint_dir) / "best.npz", model, cfg_hash, extra)
        else:
            stale += 1
        if stale > cfg.patience or cfg.patience == 0:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    return history


def walk_alpha(model: TGN) -> float | None:
    return model.nef.alpha if model.nef is not None else None


def load_weights(model: TGN, path: str | Path, cfg_hash: str | None = None) -> dict:
    """Load a checkpoint, including the walk decay rate it was trained with."""
    header = load_checkpoint(path, model, cfg_hash)
    if model.nef is not None and header.get("walk_alpha") is not None:
        model.nef.alpha = float(header["walk_alpha"])
    return header


def restore(model: TGN, path: str | Path, train_cfg: TrainConfig) -> dict:
    cfg_hash = config_hash({"model": asdict(model.cfg), "train": asdict(train_cfg)})
    return load_weights(model, path, cfg_hash)


def build_model(cfg: ModelConfig, data: StreamData) -> TGN:
    return TGN(cfg, data.train.node_count, data.node_features.dim, data.train.edge_feature_dim)
