"""Ablation arms on the sparse-signal set, averaged over seeds.

    python scripts/ablation.py --out runs/ablation --arms full,no_ior,random_uniform --seeds 0,1,2
"""

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from roiscope.synthenv import EnvConfig, gen_tile
from roiscope.train import TileBank, TrainConfig, format_table, results_json, run_ablation

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=ROOT / "configs" / "desk.json")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--arms", default="full,no_ior,no_sc,no_context,random_uniform,random_stain")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--n-train", type=int, default=100)
    ap.add_argument("--n-val", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=15)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    raw = json.loads(Path(args.config).read_text())
    env = EnvConfig.from_dict(raw.pop("env", {}))
    cfg = replace(TrainConfig.from_dict(raw), epochs=args.epochs)
    classes = range(env.classes)
    train = TileBank(gen_tile(env, c, s) for c in classes for s in range(args.n_train))
    val = TileBank(gen_tile(env, c, s) for c in classes for s in range(args.n_train, args.n_train + args.n_val))
    seeds = [int(s) for s in args.seeds.split(",")]
    results = run_ablation(train, val, cfg, args.arms.split(","), seeds)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = format_table(results, env.classes, title=f"ablation, {len(seeds)} seeds")
    (out / "ablation.txt").write_text(table)
    (out / "ablation.json").write_text(json.dumps(results_json(results), indent=1) + "\n")
    print(table, end="")


if __name__ == "__main__":
    main()
