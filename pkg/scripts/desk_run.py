"""Desk-scale learning run: 400 train / 100 validation tiles per class.

    python scripts/desk_run.py --out runs/desk [--config configs/desk.json] [--target 0.9]

Trains until the combined validation accuracy reaches the target or the epoch
budget runs out, then compares the learned attention with a uniform agent.
"""

import argparse
import json
import logging
from dataclasses import asdict
from pathlib import Path

from roiscope.nn import save_checkpoint
from roiscope.synthenv import EnvConfig, gen_tile
from roiscope.train import TileBank, TrainConfig, evaluate_bank, train_banks

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=ROOT / "configs" / "desk.json")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--n-train", type=int, default=400)
    ap.add_argument("--n-val", type=int, default=100)
    ap.add_argument("--target", type=float, default=0.90)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    raw = json.loads(Path(args.config).read_text())
    env = EnvConfig.from_dict(raw.pop("env", {}))
    cfg = TrainConfig.from_dict(raw)
    train = TileBank(gen_tile(env, c, s) for c in range(env.classes) for s in range(args.n_train))
    val = TileBank(gen_tile(env, c, s) for c in range(env.classes)
                   for s in range(args.n_train, args.n_train + args.n_val))

    params, report = train_banks(train, val, cfg, on_epoch=lambda s, p: s.val["combined"] >= args.target)
    learned = evaluate_bank(params, cfg, val)
    uniform = evaluate_bank(params, cfg, val, agent="uniform")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.bin", params, cfg.net, step=len(report.steps), seed=cfg.seed,
                    extra={"policy": asdict(cfg.policy), "ablation": cfg.ablation})
    summary = {"combined": learned.combined, "per_class": learned.per_class, "epochs": len(report.epochs),
               "minutes": report.wall_clock / 60, "hit_rate": learned.hit_rate,
               "uniform_hit_rate": uniform.hit_rate}
    (out / "report.json").write_text(json.dumps(report.to_dict(with_clock=True), indent=1) + "\n")
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
