"""Command line: train, evaluate, ablate, gen-synthetic, export-embeddings, grad-check.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import bench
from .data import DataError, Dataset, SyntheticSpec, export_embeddings, generate_synthetic, load_edge_list, \
    load_event_csv, write_event_csv
from .graph import GraphError
from .nef import NEFConfig
from .nn import config_hash
from .tgn import TGN, EmbeddingConfig, ModelConfig
from .training import TrainConfig, load_weights, train
from .walks import WalkConfig

log = logging.getLogger("tgnef")

DATA_ENV = "TGNEF_DATA_DIR"

# key -> (section, type); the model toggles map onto the nested dataclasses below
SCHEMA: dict[str, dict[str, type]] = {
    "data": {"path": str, "kind": str, "bipartite": bool, "delimiter": str, "header": bool,
             "src_col": int, "dst_col": int, "t_col": int, "label_col": int},
    "synthetic": {"n_nodes": int, "n_events": int, "motif": str, "strength": float, "seed": int, "memory": int},
    "model": {"msg": bool, "emb": bool, "rnn": bool, "aggregator": str, "K": int, "M": int, "alpha": float,
              "walk_seed": int, "d_pos": int, "d_time_nef": int, "d_hidden": int, "d_mem": int, "d_emb": int,
              "d_time": int, "n_neighbors": int, "hops": int, "aggregation": str, "memory_init": str,
              "dropout": float},
    "train": {"batch_size": int, "epochs": int, "lr": float, "patience": int},
    "eval": {"task": str, "node_mask": str, "edge_mask": str, "n_runs": int, "fractions": str,
             "both_unseen": bool, "node_epochs": int},
}


class ConfigError(ValueError):
    pass


def _parse(kind: type, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is float and raw.lower() in ("none", "auto", ""):
        return None
    return kind(raw)


@dataclass
class RunConfig:
    """Resolved settings; every field has a default so a config file is optional."""

    values: dict[str, dict[str, object]] = field(default_factory=lambda: {s: {} for s in SCHEMA})

    def set(self, section: str, key: str, raw: str) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        try:
            self.values[section][key] = _parse(SCHEMA[section][key], raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {exc}") from None

    def get(self, section: str, key: str, default=None):
        return self.values[section].get(key, default)

    def resolved(self) -> dict:
        return {s: dict(sorted(v.items())) for s, v in self.values.items()}

    def hash(self) -> str:
        return config_hash(self.resolved())

    # typed views -----------------------------------------------------------------

    def model_config(self, seed: int) -> ModelConfig:
        g = lambda k, d: self.get("model", k, d)  # noqa: E731
        walks = WalkConfig(K=g("K", 32), M=g("M", 2), alpha=g("alpha", None), seed=g("walk_seed", 0))
        nef = NEFConfig(d_pos=g("d_pos", 16), d_time=g("d_time_nef", 16), d_hidden=g("d_hidden", 16),
                        encoder="rnn" if g("rnn", True) else "mean", aggregator=g("aggregator", "mean"), walks=walks)
        emb = EmbeddingConfig(d_mem=g("d_mem", 32), d_emb=g("d_emb", 32), d_time=g("d_time", 16),
                              n_neighbors=g("n_neighbors", 10), hops=g("hops", 1),
                              use_nef_in_messages=g("msg", True), use_nef_in_embedding=g("emb", True),
                              aggregation=g("aggregation", "mean"), memory_init=g("memory_init", "gaussian"))
        return ModelConfig(embedding=emb, nef=nef, dropout=g("dropout", 0.1), seed=seed)

    def train_config(self, seed: int) -> TrainConfig:
        g = lambda k, d: self.get("train", k, d)  # noqa: E731
        return TrainConfig(batch_size=g("batch_size", 200), epochs=g("epochs", 10), lr=g("lr", 1e-3),
                           patience=g("patience", 3), seed=seed)

    def experiment(self, seed: int) -> bench.ExperimentSpec:
        g = lambda k, d: self.get("eval", k, d)  # noqa: E731
        fractions = tuple(float(x) for x in str(g("fractions", "0.8,0.1,0.1")).split(","))
        mask = bench.MaskSpec(g("node_mask", "0"), g("edge_mask", "0"), seed)
        return bench.ExperimentSpec(task=g("task", "transductive-edge"), mask=mask, fractions=fractions,
                                    n_runs=g("n_runs", 10), model=self.model_config(seed),
                                    train=self.train_config(seed), seed=seed,
                                    bipartite=bool(self.get("data", "bipartite", False)),
                                    both_unseen=g("both_unseen", False), node_epochs=g("node_epochs", 50))

    def synthetic(self) -> SyntheticSpec:
        return SyntheticSpec(**{k: v for k, v in self.values["synthetic"].items()})


def load_config(path: str | None, overrides: list[str]) -> RunConfig:
    cfg = RunConfig()
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case (K, M)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg.set(section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        lhs, raw = item.split("=", 1)
        section, key = lhs.split(".", 1)
        cfg.set(section.strip(), key.strip(), raw)
    return cfg


def write_resolved(cfg: RunConfig, path: Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# config_hash = {cfg.hash()}\n")
        for section, vals in cfg.resolved().items():
            fh.write(f"[{section}]\n")
            for k, v in vals.items():
                fh.write(f"{k} = {v}\n")
            fh.write("\n")


# data ------------------------------------------------------------------------------------


def load_dataset(cfg: RunConfig) -> Dataset:
    kind = cfg.get("data", "kind", "csv")
    if kind == "synthetic":
        return generate_synthetic(cfg.synthetic())
    path = cfg.get("data", "path")
    if path is None:
        raise ConfigError("data.path is required unless data.kind = synthetic")
    p = Path(path)
    if not p.is_absolute() and not p.exists() and os.environ.get(DATA_ENV):
        p = Path(os.environ[DATA_ENV]) / p
    if not p.exists():
        raise ConfigError(f"dataset not found: {p}")
    bip = bool(cfg.get("data", "bipartite", False))
    if kind == "csv":
        return load_event_csv(p, bipartite=bip)
    if kind == "edgelist":
        cols = {"src": cfg.get("data", "src_col", 0), "dst": cfg.get("data", "dst_col", 1),
                "t": cfg.get("data", "t_col", 2)}
        if cfg.get("data", "label_col") is not None:
            cols["label"] = cfg.get("data", "label_col")
        delim = cfg.get("data", "delimiter", "whitespace")
        return load_edge_list(p, cols, delimiter=None if delim == "whitespace" else delim,
                              header=cfg.get("data", "header", False), bipartite=bip)
    raise ConfigError(f"unknown data.kind {kind!r}; expected csv, edgelist or synthetic")


# commands --------------------------------------------------------------------------------


def cmd_train(args, cfg: RunConfig, out: Path) -> None:
    data = load_dataset(cfg)
    spec = replace(cfg.experiment(args.seed), n_runs=1)
    run_seed = bench.run_seeds(spec)[0]
    stream = bench.prepare(spec, data.events, data.node_features, run_seed)
    model = TGN(spec.model, data.events.node_count, data.node_features.dim, data.events.edge_feature_dim)
    h = cfg.hash()
    history = train(model, stream, spec.train, checkpoint_dir=out)
    (out / "best.npz").rename(out / "checkpoint.npz")
    history.write_jsonl(out / "history.jsonl", h)
    write_resolved(cfg, out / "config.ini")
    log.info("best epoch %d, val AP %.4f", history.best_epoch, history.best_val_ap)


def _report_files(out: Path, stem: str, report: bench.RunReport, cfg_hash: str) -> None:
    (out / f"{stem}.jsonl").write_text(report.records())
    with open(out / f"{stem}.timings.jsonl", "w") as fh:
        for r, wall in zip(report.runs, report.runtimes):
            fh.write(json.dumps({"config_hash": cfg_hash, "seed": r["seed"], "seconds": wall}) + "\n")


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> None:
    data = load_dataset(cfg)
    spec = cfg.experiment(args.seed)
    report = bench.run_experiment(spec, data.events, data.node_features, parallel=args.parallel_seeds)
    _report_files(out, "report", report, cfg.hash())
    (out / "table.txt").write_text(f"# config_hash = {cfg.hash()}\n" + bench.format_table([("model", report)]))
    write_resolved(cfg, out / "config.ini")
    print(bench.format_table([("model", report)]), end="")


ABLATIONS = [  # (name, msg, emb, rnn)
    ("Msg+Emb+RNN", True, True, True),
    ("Emb", False, True, False),
    ("Msg", True, False, False),
    ("Emb+Msg", True, True, False),
    ("Msg+RNN", True, False, True),
    ("Emb+RNN", False, True, True),
    ("baseline", False, False, False),
]
RNN_ONLY = ("RNN", False, False, True)


def cmd_ablate(args, cfg: RunConfig, out: Path) -> None:
    data = load_dataset(cfg)
    combos = ABLATIONS + ([RNN_ONLY] if args.all_combos else [])
    rows = []
    for name, msg, emb, rnn in combos:
        sub = RunConfig({s: dict(v) for s, v in cfg.values.items()})
        sub.values["model"].update(msg=msg, emb=emb, rnn=rnn)
        spec = sub.experiment(args.seed)
        report = bench.run_experiment(spec, data.events, data.node_features, parallel=args.parallel_seeds)
        _report_files(out, f"ablation_{name.replace('+', '_')}", report, sub.hash())
        rows.append((name, report))
    table = bench.format_table(rows)
    (out / "ablation_table.txt").write_text(f"# config_hash = {cfg.hash()}\n" + table)
    write_resolved(cfg, out / "config.ini")
    print(table, end="")


def cmd_gen_synthetic(args, cfg: RunConfig, out: Path) -> None:
    spec = cfg.synthetic()
    if args.seed is not None and "seed" not in cfg.values["synthetic"]:
        spec = replace(spec, seed=args.seed)
    data = generate_synthetic(spec)
    write_event_csv(data, out / "synthetic.csv")
    write_resolved(cfg, out / "config.ini")


def cmd_export(args, cfg: RunConfig, out: Path) -> None:
    if not args.checkpoint:
        raise ConfigError("export-embeddings needs --checkpoint")
    data = load_dataset(cfg)
    model = TGN(cfg.model_config(args.seed), data.events.node_count, data.node_features.dim,
                data.events.edge_feature_dim)
    try:
        load_weights(model, args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load checkpoint: {exc}") from None
    t = args.time if args.time is not None else data.events.t_max + 1.0
    nodes = args.nodes.split(",") if args.nodes else None
    export_embeddings(model, data, nodes, t, out / "embeddings.csv")
    write_resolved(cfg, out / "config.ini")


def cmd_grad_check(args, cfg: RunConfig, out: Path) -> None:
    from .gradcheck import check_blocks

    lines, ok = [f"# config_hash = {cfg.hash()}"], True
    for seed in range(args.seed, args.seed + args.n_seeds):
        for name, rep in check_blocks(seed).items():
            lines.append(f"seed={seed} block={name} {rep}")
            ok &= rep.passed
    lines.append("PASS" if ok else "FAIL")
    (out / "grad_check.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if not ok:
        raise RuntimeError("gradient check failed")


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "ablate": cmd_ablate,
            "gen-synthetic": cmd_gen_synthetic, "export-embeddings": cmd_export, "grad-check": cmd_grad_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tgnef", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="sectioned key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="runs/out")
    p.add_argument("--parallel-seeds", type=int, default=1)
    p.add_argument("--all-combos", action="store_true", help="ablate: also run the RNN-only combination")
    p.add_argument("--checkpoint", help="export-embeddings: trained weights")
    p.add_argument("--time", type=float, help="export-embeddings: evaluation time (default after the last event)")
    p.add_argument("--nodes", help="export-embeddings: comma-separated external ids (default all)")
    p.add_argument("--n-seeds", type=int, default=20, help="grad-check: number of fixture seeds")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out_dir)
    try:
        cfg = load_config(args.config, args.set)
        # validate every typed view before any work happens
        cfg.experiment(args.seed)
        if args.command == "gen-synthetic":
            cfg.synthetic()
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    # artifacts are staged and moved into place only on success
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=out.parent))
    try:
        COMMANDS[args.command](args, cfg, stage)
    except (ConfigError, DataError, GraphError) as exc:
        shutil.rmtree(stage, ignore_errors=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        shutil.rmtree(stage, ignore_errors=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    for item in stage.iterdir():
        target = out / item.name
        if target.is_dir():
            shutil.rmtree(target)
        item.replace(target)
    stage.rmdir()
    return 0


if __name__ == "__main__":
    sys.exit(main())
