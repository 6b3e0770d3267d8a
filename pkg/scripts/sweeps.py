"""Glimpse-count and glimpse-size sweeps at desk scale.

    python scripts/sweeps.py --out runs/sweeps --n-train 100 --epochs 15
"""

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from roiscope.synthenv import EnvConfig, gen_tile
from roiscope.train import TileBank, TrainConfig, format_table, results_json, run_sweep

ROOT = Path(__file__).resolve().parents[1]
GRID = {"rois": [4, 5, 6, 8], "roi_size": [8, 12, 16]}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=ROOT / "configs" / "desk.json")
    ap.add_argument("--out", default="runs/sweeps")
    ap.add_argument("--n-train", type=int, default=100)
    ap.add_argument("--n-val", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--seeds", default="0")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    raw = json.loads(Path(args.config).read_text())
    env = EnvConfig.from_dict(raw.pop("env", {}))
    cfg = replace(TrainConfig.from_dict(raw), epochs=args.epochs)
    classes = range(env.classes)
    train = TileBank(gen_tile(env, c, s) for c in classes for s in range(args.n_train))
    val = TileBank(gen_tile(env, c, s) for c in classes for s in range(args.n_train, args.n_train + args.n_val))
    seeds = [int(s) for s in args.seeds.split(",")]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, values in GRID.items():
        rows = run_sweep(train, val, cfg, name, values, seeds)
        table = format_table(rows, env.classes, title=f"sweep {name}")
        (out / f"sweep_{name}.txt").write_text(table)
        (out / f"sweep_{name}.json").write_text(json.dumps(results_json(rows), indent=1) + "\n")
        print(table)


if __name__ == "__main__":
    main()
