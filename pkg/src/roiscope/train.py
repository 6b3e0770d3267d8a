"""Momentum SGD training loop, greedy evaluation, ablation arms and sweeps."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .imaging import QMAX, Tile, augment, make_context
from .nn import NetConfig, ParameterSet, init_params, save_checkpoint
from .policy import (BaselineEstimator, NumericalError, PolicyConfig, glimpse_hits, loss_and_grad,
                     rollout_batch, update_baseline)
from .synthenv import Dataset, read_dataset

log = logging.getLogger(__name__)

AUGMENTATIONS = ("rot0", "rot90", "rot180", "rot270", "flipH", "flipV", "transpose")

# arm -> (policy overrides, location agent)
ABLATIONS = {
    "full": ({}, "policy"),
    "no_ior": ({"use_ior": False}, "policy"),
    "no_sc": ({"use_sc": False}, "policy"),
    "no_context": ({"use_context": False}, "policy"),
    "random_uniform": ({}, "uniform"),
    "random_stain": ({}, "stain"),
}


@dataclass
class TrainConfig:
    lr0: float = 0.001
    lr_decay: float = 0.97
    momentum: float = 0.9
    batch_size: int = 10
    epochs: int = 50
    seed: int = 0
    augmentation: bool = True
    ablation: str = "full"
    val_fraction: float = 0.15
    eval_seed: int = 1
    eval_batch: int = 50
    # multiplies the location-head learning rate; its policy gradient is far larger than the rest
    location_lr_scale: float = 1.0
    net: NetConfig = field(default_factory=NetConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def __post_init__(self):
        if isinstance(self.net, dict):
            self.net = NetConfig(**self.net)
        if isinstance(self.policy, dict):
            self.policy = PolicyConfig(**self.policy)
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.location_lr_scale <= 0:
            raise ValueError("location_lr_scale must be > 0")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {sorted(ABLATIONS)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def arm(self) -> tuple[PolicyConfig, str]:
        overrides, agent = ABLATIONS[self.ablation]
        return replace(self.policy, **overrides), agent


def set_option(cfg: TrainConfig, key: str, raw: str) -> TrainConfig:
    """Apply one ``section.name=value`` override, parsing the value as JSON when possible."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    d = cfg.to_dict()
    node = d
    parts = key.split(".")
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise KeyError(f"unknown config section {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise KeyError(f"unknown config key {key!r}")
    node[parts[-1]] = value
    return TrainConfig.from_dict(d)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr0 * cfg.lr_decay**epoch


class MomentumSGD:
    """Classical momentum: v <- m v - lr g ; theta <- theta + v."""

    def __init__(self, params: ParameterSet, momentum: float):
        self.momentum = momentum
        self.velocity = params.zeros_like()

    def step(self, params: ParameterSet, grads: ParameterSet, lr: float) -> None:
        for k in params:
            v = self.velocity[k]
            v *= self.momentum
            v -= lr * grads[k]
            params[k] += v


# -- data -----------------------------------------------------------------------------


class TileBank:
    """Tiles held as 16-bit samples to keep large sets in memory."""

    def __init__(self, tiles):
        # consumed one at a time so a generator never holds float tiles for the whole set
        pixels, stain, relevance, labels, seeds = [], [], [], [], []
        for t in tiles:
            pixels.append(np.round(t.pixels * QMAX).astype(np.uint16))
            stain.append(np.round(t.stain * QMAX).astype(np.uint16))
            relevance.append(t.relevance)
            labels.append(t.label)
            seeds.append(t.seed)
        if not labels:
            raise ValueError("a tile bank needs at least one tile")
        self.pixels, self.stain, self.relevance = np.stack(pixels), np.stack(stain), np.stack(relevance)
        self.labels = np.array(labels, dtype=int)
        self.seeds = np.array(seeds, dtype=int)

    def __len__(self) -> int:
        return len(self.labels)

    def tile(self, i: int) -> Tile:
        return Tile(pixels=self.pixels[i] / QMAX, label=int(self.labels[i]), stain=self.stain[i] / QMAX,
                    relevance=self.relevance[i], seed=int(self.seeds[i]))


def split_dataset(ds: Dataset, val_fraction: float, seed: int) -> tuple[list, list]:
    """Use the manifest split when present, else a class-stratified random split."""
    if any(e.split in ("train", "val") for e in ds.entries):
        return [e for e in ds.entries if e.split == "train"], [e for e in ds.entries if e.split == "val"]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    train, val = [], []
    for cls in sorted({e.label for e in ds.entries}):
        members = [e for e in ds.entries if e.label == cls]
        order = rng.permutation(len(members))
        n_val = int(round(val_fraction * len(members)))
        val += [members[i] for i in order[:n_val]]
        train += [members[i] for i in order[n_val:]]
    return train, val


def load_banks(dataset_dir, cfg: TrainConfig) -> tuple[TileBank, TileBank]:
    ds = read_dataset(dataset_dir)
    train_e, val_e = split_dataset(ds, cfg.val_fraction, cfg.seed)
    if not train_e:
        raise ValueError(f"dataset {dataset_dir} has no training tiles")
    train = TileBank(ds.load(e) for e in train_e)
    val = TileBank(ds.load(e) for e in val_e) if val_e else train
    return train, val


# -- evaluation -----------------------------------------------------------------------


@dataclass
class EvalResult:
    per_class: list
    combined: float
    hit_rate: float
    predictions: list
    confidences: list
    labels: list

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_bank(params: ParameterSet, cfg: TrainConfig, bank: TileBank, agent: str | None = None,
                  keep_episodes: bool = False):
    """Greedy rollouts (mean locations) over every tile of ``bank``."""
    pcfg, arm_agent = cfg.arm()
    agent = agent or arm_agent
    preds, confs, hits = [], [], []
    episodes = []
    for start in range(0, len(bank), cfg.eval_batch):
        idx = range(start, min(start + cfg.eval_batch, len(bank)))
        tiles = [bank.tile(i) for i in idx]
        rngs = [np.random.default_rng(np.random.SeedSequence([cfg.eval_seed, i])) for i in idx]
        eps = rollout_batch(tiles, params, cfg.net, pcfg, rngs, greedy=True, agent=agent)
        for tile, e in zip(tiles, eps):
            preds.append(e.predicted)
            confs.append(float(e.class_dists[-1].max()))
            if tile.label > 0:
                hits.append(glimpse_hits(tile, e.locations[: pcfg.T], cfg.net.patch).mean())
        if keep_episodes:
            episodes += eps
    labels = bank.labels
    preds_a = np.array(preds)
    per_class = []
    for c in range(cfg.net.classes):
        sel = labels == c
        per_class.append(float((preds_a[sel] == c).mean()) if sel.any() else float("nan"))
    result = EvalResult(
        per_class=per_class,
        combined=float((preds_a == labels).mean()),
        hit_rate=float(np.mean(hits)) if hits else 0.0,
        predictions=[int(p) for p in preds],
        confidences=confs,
        labels=[int(v) for v in labels],
    )
    return (result, episodes) if keep_episodes else result


# -- training -------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    l_theta: float
    l_sc: float
    l_ior: float
    train_accuracy: float
    val: dict


@dataclass
class TrainReport:
    config: dict
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_combined: float = 0.0
    # (total, l_theta, l_sc, l_ior, lam) per optimisation step
    steps: list = field(default_factory=list)
    wall_clock: float = 0.0

    def to_dict(self, with_clock: bool = False) -> dict:
        d = {"config": self.config, "epochs": [asdict(e) for e in self.epochs], "best_epoch": self.best_epoch,
             "best_combined": self.best_combined, "steps": self.steps}
        if with_clock:
            d["wall_clock"] = self.wall_clock
        return d

    def write(self, path) -> None:
        # wall clock stays out of the file so reports are byte-reproducible
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def _augmented(tile: Tile, op: str) -> Tile:
    return tile if op == "rot0" else augment(tile, op)


def train_banks(train: TileBank, val: TileBank, cfg: TrainConfig,
                on_epoch=None) -> tuple[ParameterSet, TrainReport]:
    """Train on in-memory banks; returns the best-on-validation parameters."""
    t0 = time.perf_counter()
    pcfg, agent = cfg.arm()
    params = init_params(cfg.net, cfg.seed)
    report = TrainReport(config=cfg.to_dict())
    best = params.copy()
    if len(train) == 0:
        raise ValueError("empty training set")
    opt = MomentumSGD(params, cfg.momentum)
    baseline = BaselineEstimator.zeros(pcfg.T, pcfg.baseline_decay)
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, epoch]))
        order = rng.permutation(len(train))
        ops = rng.integers(len(AUGMENTATIONS), size=len(train))
        sums = np.zeros(4)
        correct = 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            tiles = [train.tile(i) for i in idx]
            if cfg.augmentation:
                tiles = [_augmented(t, AUGMENTATIONS[ops[i]]) for t, i in zip(tiles, idx)]
            rngs = [np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, epoch, b, j]))
                    for j in range(len(idx))]
            try:
                episodes = rollout_batch(tiles, params, cfg.net, pcfg, rngs, agent=agent)
                loss, grads = loss_and_grad(episodes, params, cfg.net, pcfg, baseline)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} batch {b}: {exc}") from exc
            if not np.isfinite(loss.total):
                raise NumericalError(f"epoch {epoch} batch {b}: loss is {loss.total}")
            if cfg.location_lr_scale != 1.0:
                for k in ("theta_l.W", "theta_l.b"):
                    grads[k] = grads[k] * cfg.location_lr_scale
            opt.step(params, grads, lr)
            if not params.is_finite():
                raise NumericalError(f"epoch {epoch} batch {b}: parameters became non-finite")
            baseline = update_baseline(baseline, loss.extras["returns_to_go"])
            report.steps.append([loss.total, loss.l_theta, loss.l_sc, loss.l_ior, pcfg.lam])
            sums += [loss.total, loss.l_theta, loss.l_sc, loss.l_ior]
            correct += sum(e.predicted == e.label for e in episodes)
            step += 1
        ev = evaluate_bank(params, cfg, val)
        n = len(train)
        stats = EpochStats(epoch=epoch, lr=lr, loss=sums[0] / n, l_theta=sums[1] / n, l_sc=sums[2] / n,
                           l_ior=sums[3] / n, train_accuracy=correct / n,
                           val={"per_class": ev.per_class, "combined": ev.combined, "hit_rate": ev.hit_rate})
        report.epochs.append(stats)
        log.info("epoch %d lr %.6f loss %.3f train %.3f val %.3f hit %.3f", epoch, lr, stats.loss,
                 stats.train_accuracy, ev.combined, ev.hit_rate)
        if ev.combined > report.best_combined or report.best_epoch < 0:
            report.best_combined = ev.combined
            report.best_epoch = epoch
            best = params.copy()
        if on_epoch is not None and on_epoch(stats, params):
            break
    report.wall_clock = time.perf_counter() - t0
    return best, report


def train(dataset_dir, cfg: TrainConfig, out_dir=None, on_epoch=None) -> tuple[ParameterSet, TrainReport]:
    train_bank, val_bank = load_banks(dataset_dir, cfg)
    params, report = train_banks(train_bank, val_bank, cfg, on_epoch=on_epoch)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.bin", params, cfg.net, step=len(report.steps), seed=cfg.seed,
                        extra={"policy": asdict(cfg.policy), "ablation": cfg.ablation})
        report.write(out / "report.json")
    return params, report


def evaluate(params: ParameterSet, dataset_dir, cfg: TrainConfig, split: str = "val") -> EvalResult:
    ds = read_dataset(dataset_dir)
    train_e, val_e = split_dataset(ds, cfg.val_fraction, cfg.seed)
    entries = {"val": val_e, "train": train_e, "all": ds.entries}[split] or ds.entries
    bank = TileBank(ds.load(e) for e in entries)
    return evaluate_bank(params, cfg, bank)


# -- ablations and sweeps ----------------------------------------------------------------


@dataclass
class ArmResult:
    arm: str
    per_class: list
    combined: float
    hit_rate: float
    seeds: list
    per_seed: list

    def row(self) -> list:
        return [self.arm] + [round(v, 3) for v in self.per_class] + [round(self.combined, 3), round(self.hit_rate, 3)]


def run_arm(train_bank: TileBank, val_bank: TileBank, cfg: TrainConfig, label: str, seeds) -> ArmResult:
    per_seed = []
    for seed in seeds:
        c = replace(cfg, seed=seed)
        params, _ = train_banks(train_bank, val_bank, c)
        ev = evaluate_bank(params, c, val_bank)
        per_seed.append({"seed": seed, "per_class": ev.per_class, "combined": ev.combined,
                         "hit_rate": ev.hit_rate})
    return ArmResult(
        arm=label,
        per_class=np.mean([p["per_class"] for p in per_seed], axis=0).tolist(),
        combined=float(np.mean([p["combined"] for p in per_seed])),
        hit_rate=float(np.mean([p["hit_rate"] for p in per_seed])),
        seeds=list(seeds),
        per_seed=per_seed,
    )


def run_ablation(train_bank: TileBank, val_bank: TileBank, cfg: TrainConfig, arms=("full",),
                 seeds=(0,)) -> list:
    """Every arm trained and evaluated on the same data and seeds."""
    return [run_arm(train_bank, val_bank, replace(cfg, ablation=arm), arm, seeds) for arm in arms]


SWEEPS = {
    "rois": ("policy", "T"),
    "roi_size": ("net", "patch"),
    "scales": ("net", "scales"),
}


def run_sweep(train_bank: TileBank, val_bank: TileBank, cfg: TrainConfig, name: str, values,
              seeds=(0,)) -> list:
    section, key = SWEEPS[name]
    rows = []
    for value in values:
        sub = replace(getattr(cfg, section), **{key: value})
        c = replace(cfg, **{section: sub})
        rows.append(run_arm(train_bank, val_bank, c, f"{name}={value}", seeds))
    return rows


def format_table(results: list, classes: int = 4, title: str = "") -> str:
    header = ["arm"] + [f"{c}" if c == 0 else f"{c}+" for c in range(classes)] + ["Acc_comb", "hit_rate"]
    rows = [header] + [[str(v) for v in r.row()] for r in results]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [title] if title else []
    for r in rows:
        lines.append("  ".join(v.ljust(wd) for v, wd in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def results_json(results: list) -> list:
    return [asdict(r) for r in results]
