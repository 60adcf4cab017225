"""UCI messages, transductive edge prediction at strict (75%/75%) masks.

Looks for the data under $TGNEF_DATA_DIR: either ``CollegeMsg.txt`` (SNAP,
``src dst unix_ts`` per line) or ``uci.csv`` in the event CSV layout.
Trains the full model with default settings for 10 epochs and compares it
with the same model left at its random initialisation.
"""
from __future__ import annotations

import argparse
import json
import os
import time
from pathlib import Path

from tgnef.bench import ExperimentSpec, MaskSpec, control_once, run_experiment, run_seeds
from tgnef.data import Dataset, load_edge_list, load_event_csv
from tgnef.training import TrainConfig

CANDIDATES = ("CollegeMsg.txt", "uci.csv")


def find_uci(root: str | None = None) -> Path | None:
    root = root or os.environ.get("TGNEF_DATA_DIR")
    if not root:
        return None
    for name in CANDIDATES:
        p = Path(root) / name
        if p.exists():
            return p
    return None


def load_uci(path: Path) -> Dataset:
    if path.suffix == ".csv":
        return load_event_csv(path, write_mapping=False)
    return load_edge_list(path, {"src": 0, "dst": 1, "t": 2}, delimiter=None, header=False)


def run(path: Path, seed: int = 0) -> dict:
    data = load_uci(path)
    spec = ExperimentSpec(task="transductive-edge", mask=MaskSpec("strict", "strict", seed), n_runs=1,
                          train=TrainConfig(epochs=10), seed=seed)
    t0 = time.perf_counter()
    rep = run_experiment(spec, data.events, data.node_features)
    control = control_once(spec, data.events, data.node_features, run_seeds(spec)[0])
    auc = rep.mean_auc
    return {"auc": auc, "ap": rep.mean_ap, "control_auc": control["auc"], "seconds": time.perf_counter() - t0,
            "passed": bool(auc >= 0.72 and auc - control["auc"] >= 0.15)}


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/uci.json")
    a = p.parse_args()
    path = find_uci(a.data_dir)
    if path is None:
        raise SystemExit(f"no UCI file found; put one of {', '.join(CANDIDATES)} under $TGNEF_DATA_DIR")
    res = run(path, a.seed)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    Path(a.out).write_text(json.dumps(res, indent=2))
    print(json.dumps(res))


if __name__ == "__main__":
    main()
