"""Command-line entry point: ``roiscope <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import colorsys
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "ROISCOPE_THREADS"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

log = logging.getLogger("roiscope")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    input_hash: str
    outputs: list = field(default_factory=list)
    started: float = 0.0
    finished: float = 0.0

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / f"run_{self.command}.json"
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")
        return path


def content_hash(paths) -> str:
    """sha256 over the bytes of every file under ``paths``, in sorted path order."""
    h = hashlib.sha256()
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files += [(q.relative_to(p).as_posix(), q) for q in sorted(p.rglob("*")) if q.is_file()]
        else:
            files.append((p.name, p))
    for name, f in files:
        h.update(name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


# -- configuration ---------------------------------------------------------------


def load_config(args):
    """TrainConfig from --config (JSON) plus flag and --set overrides."""
    from .train import TrainConfig, set_option

    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    raw = dict(raw)
    raw.pop("env", None)
    try:
        cfg = TrainConfig.from_dict(raw)
    except TypeError as exc:
        raise UsageError(f"bad config: {exc}") from exc
    flags = {
        "seed": ("seed", args.seed),
        "ablation": ("ablation", getattr(args, "ablation", None)),
        "steps": ("epochs", getattr(args, "steps", None)),
        "rois": ("policy.T", getattr(args, "rois", None)),
        "roi_size": ("net.patch", getattr(args, "roi_size", None)),
        "lam": ("policy.lam", getattr(args, "lam", None)),
        "mode": ("policy.mode", getattr(args, "mode", None)),
    }
    for key, value in flags.values():
        if value is not None:
            cfg = set_option(cfg, key, json.dumps(value))
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg = set_option(cfg, key.strip(), value.strip())
    return cfg


def load_env(args):
    from .synthenv import EnvConfig

    env = {}
    if args.config:
        try:
            env = json.loads(Path(args.config).read_text()).get("env", {})
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    for item in args.set or []:
        key, _, value = item.partition("=")
        if key.startswith("env."):
            env[key[4:]] = json.loads(value)
    if args.seed is not None:
        env["seed"] = args.seed
    try:
        cfg = EnvConfig.from_dict(env)
    except TypeError as exc:
        raise UsageError(f"bad env config: {exc}") from exc
    cfg.validate()
    return cfg


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(command, config, seed, inputs, outputs, started, out) -> None:
    m = RunManifest(command=command, config=config, seed=seed, input_hash=content_hash(inputs),
                    outputs=sorted(str(p) for p in outputs), started=started, finished=time.time())
    m.write(out)


# -- commands ------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .synthenv import write_dataset

    t0 = time.time()
    env = load_env(args)
    out = _out_dir(args)
    manifest = write_dataset(out, env, args.n_train, args.n_val)
    outputs = [manifest] + sorted(p for p in out.rglob("*.img*"))
    _manifest("gen-data", env.to_dict(), env.seed, [], outputs, t0, out)
    print(f"wrote {len(outputs) - 1} files under {out}")
    return EXIT_OK


def cmd_gen_slide(args) -> int:
    from .synthenv import gen_slide, write_slide

    t0 = time.time()
    env = load_env(args)
    out = _out_dir(args)
    slide = gen_slide(env, args.score, args.rows, args.cols, args.slide_seed)
    meta = write_slide(out, slide, env)
    outputs = [meta] + sorted((out / "tiles").iterdir())
    _manifest("gen-slide", env.to_dict(), env.seed, [], outputs, t0, out)
    print(f"slide score {slide.slide_label}: {slide.rows}x{slide.cols} tiles under {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train

    t0 = time.time()
    cfg = load_config(args)
    out = _out_dir(args)
    _, report = train(args.data, cfg, out_dir=out)
    outputs = [out / "checkpoint.bin", out / "checkpoint.json", out / "report.json"]
    _manifest("train", cfg.to_dict(), cfg.seed, [args.data], outputs, t0, out)
    print(f"best epoch {report.best_epoch}: combined validation accuracy {report.best_combined:.4f}")
    return EXIT_OK


def _load_model(path):
    from .nn import load_checkpoint
    from .policy import PolicyConfig
    from .train import TrainConfig

    params, net, meta = load_checkpoint(path)
    cfg = TrainConfig(net=net, policy=PolicyConfig(**meta.get("policy", {})),
                      ablation=meta.get("ablation", "full"), seed=meta.get("seed", 0))
    return params, cfg


def cmd_eval(args) -> int:
    from .train import evaluate

    t0 = time.time()
    params, cfg = _load_model(args.checkpoint)
    out = _out_dir(args)
    result = evaluate(params, args.data, cfg, split=args.split)
    path = out / "eval.json"
    path.write_text(json.dumps(result.to_dict(), indent=1, sort_keys=True) + "\n")
    _manifest("eval", cfg.to_dict(), cfg.seed, [args.checkpoint, args.data], [path], t0, out)
    print(f"combined {result.combined:.4f} hit_rate {result.hit_rate:.4f} per_class "
          + " ".join(f"{v:.3f}" for v in result.per_class))
    return EXIT_OK


def _seeds(args) -> list:
    return [int(s) for s in args.seeds.split(",")] if args.seeds else [0]


def cmd_ablate(args) -> int:
    from .train import ABLATIONS, format_table, load_banks, results_json, run_ablation

    t0 = time.time()
    cfg = load_config(args)
    arms = args.arms.split(",")
    unknown = [a for a in arms if a not in ABLATIONS]
    if unknown:
        raise UsageError(f"unknown arms {unknown}; choose from {sorted(ABLATIONS)}")
    out = _out_dir(args)
    train_bank, val_bank = load_banks(args.data, cfg)
    results = run_ablation(train_bank, val_bank, cfg, arms, _seeds(args))
    table = format_table(results, cfg.net.classes, title="ablation")
    (out / "ablation.txt").write_text(table)
    (out / "ablation.json").write_text(json.dumps(results_json(results), indent=1, sort_keys=True) + "\n")
    _manifest("ablate", cfg.to_dict(), cfg.seed, [args.data], [out / "ablation.txt", out / "ablation.json"],
              t0, out)
    print(table, end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .train import SWEEPS, format_table, load_banks, results_json, run_sweep

    t0 = time.time()
    cfg = load_config(args)
    if args.name not in SWEEPS:
        raise UsageError(f"unknown sweep {args.name!r}; choose from {sorted(SWEEPS)}")
    values = [json.loads(v) for v in args.values.split(";")]
    out = _out_dir(args)
    train_bank, val_bank = load_banks(args.data, cfg)
    results = run_sweep(train_bank, val_bank, cfg, args.name, values, _seeds(args))
    table = format_table(results, cfg.net.classes, title=f"sweep {args.name}")
    (out / f"sweep_{args.name}.txt").write_text(table)
    (out / f"sweep_{args.name}.json").write_text(json.dumps(results_json(results), indent=1, sort_keys=True) + "\n")
    _manifest("sweep", cfg.to_dict(), cfg.seed, [args.data],
              [out / f"sweep_{args.name}.txt", out / f"sweep_{args.name}.json"], t0, out)
    print(table, end="")
    return EXIT_OK


def cmd_score_slide(args) -> int:
    import numpy as np

    from .aggregate import ScoringConfig, contest_score, pcms, score_slide
    from .policy import rollout_batch
    from .synthenv import read_slide

    t0 = time.time()
    params, cfg = _load_model(args.checkpoint)
    pcfg, agent = cfg.arm()
    slide, meta = read_slide(args.slide)
    out = _out_dir(args)
    tiles = [t for row in slide.tiles for t in row]
    ids = [f"r{r}_c{c}" for r in range(slide.rows) for c in range(slide.cols)]
    areas = [float(f) * t.pixels.shape[0] * t.pixels.shape[1] for f, t in zip(slide.tissue_fraction.ravel(), tiles)]
    rngs = [np.random.default_rng(np.random.SeedSequence([cfg.eval_seed, i])) for i in range(len(tiles))]
    preds, confs = [], []
    for start in range(0, len(tiles), cfg.eval_batch):
        eps = rollout_batch(tiles[start : start + cfg.eval_batch], params, cfg.net, pcfg,
                            rngs[start : start + cfg.eval_batch], greedy=True, agent=agent)
        preds += [e.predicted for e in eps]
        confs += [float(e.class_dists[-1].max()) for e in eps]
    prediction = score_slide(ids, preds, confs, areas)
    gt_ratios = pcms([t.label for t in tiles], areas)
    gt = int(meta["slide_label"])
    contest = contest_score(prediction.slide_score, gt, prediction.area_ratios, gt_ratios, preds, confs,
                            ScoringConfig())
    record = {"slide": prediction.to_dict(), "gt_score": gt, "gt_area_ratios": gt_ratios.tolist(),
              "contest": contest.to_dict()}
    path = out / "slide_score.json"
    path.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    _manifest("score-slide", cfg.to_dict(), cfg.seed, [args.checkpoint, args.slide], [path], t0, out)
    print(f"slide score {prediction.slide_score} (gt {gt}) points {contest.points:g} "
          f"combined {contest.combined:.3f}")
    return EXIT_OK


# -- overlay rendering -------------------------------------------------------------

# 3x5 digit glyphs, one string per row
_DIGITS = {
    "0": ("111", "101", "101", "101", "111"), "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"), "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"), "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"), "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"), "9": ("111", "101", "111", "001", "111"),
}


def box_colors(n: int) -> list:
    """Hues from blue (first) to red (last)."""
    if n == 1:
        return [(0.0, 0.0, 1.0)]
    return [colorsys.hsv_to_rgb((2.0 / 3.0) * (1.0 - i / (n - 1)), 1.0, 1.0) for i in range(n)]


def _draw_label(img, text: str, top: int, left: int, color) -> None:
    h, w = img.shape[:2]
    for k, ch in enumerate(text):
        for r, row in enumerate(_DIGITS[ch]):
            for c, bit in enumerate(row):
                y, x = top + r, left + 4 * k + c
                if bit == "1" and 0 <= y < h and 0 <= x < w:
                    img[y, x] = color


def render_overlay(pixels, locations, w: int):
    """Copy of ``pixels`` with one numbered box per location."""
    import numpy as np

    from .imaging import Location, fine_window

    img = np.array(pixels, dtype=float, copy=True)
    shape = img.shape[:2]
    colors = box_colors(len(locations)) if len(locations) else []
    for i, ((x, y), color) in enumerate(zip(locations, colors)):
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ValueError(f"trace location {i} = ({x}, {y}) lies outside [0,1]^2")
        top, left = fine_window(Location(x, y), w, shape)
        bottom, right = top + w - 1, left + w - 1
        img[top, left : right + 1] = color
        img[bottom, left : right + 1] = color
        img[top : bottom + 1, left] = color
        img[top : bottom + 1, right] = color
        _draw_label(img, str(i + 1), top + 2, left + 2, color)
    return img


def _read_trace(path, tile_shape) -> list:
    try:
        data = json.loads(Path(path).read_text())
        locs = data["locations"] if isinstance(data, dict) else data
        locations = [tuple(float(v) for v in loc) for loc in locs]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"unreadable trace {path}: {exc}") from exc
    if any(len(loc) != 2 for loc in locations):
        raise ValueError("trace locations must be (x, y) pairs")
    if isinstance(data, dict) and "tile_shape" in data and tuple(data["tile_shape"]) != tuple(tile_shape):
        raise ValueError(f"trace was recorded on a {data['tile_shape']} tile, got {list(tile_shape)}")
    return locations


def cmd_visualize(args) -> int:
    import numpy as np

    from .imaging import read_raster, write_rgb
    from .policy import rollout_batch

    t0 = time.time()
    tile = read_raster(args.tile)
    if args.trace:
        locations = _read_trace(args.trace, tile.shape)
        w = args.roi_size or 16
        config, seed, inputs = {"roi_size": w}, 0, [args.trace, args.tile]
    elif args.checkpoint:
        params, cfg = _load_model(args.checkpoint)
        pcfg, agent = cfg.arm()
        if tile.pixels.shape[:2] != (cfg.net.tile_size, cfg.net.tile_size):
            raise ValueError(f"tile {tile.pixels.shape[:2]} does not match the model tile size {cfg.net.tile_size}")
        seed = args.seed if args.seed is not None else cfg.eval_seed
        ep = rollout_batch([tile], params, cfg.net, pcfg, [np.random.default_rng(seed)], greedy=True,
                           agent=agent)[0]
        locations = [tuple(float(v) for v in loc) for loc in ep.locations[: pcfg.T]]
        w, config, inputs = cfg.net.patch, cfg.to_dict(), [args.checkpoint, args.tile]
    else:
        raise UsageError("visualize needs --trace or --checkpoint")
    if w > min(tile.pixels.shape[:2]):
        raise ValueError(f"ROI side {w} exceeds the tile")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rgb(out, render_overlay(tile.pixels, locations, w))
    trace_path = out.with_suffix(".trace.json")
    trace = {"locations": [list(loc) for loc in locations], "roi_size": w, "tile_shape": list(tile.shape)}
    trace_path.write_text(json.dumps(trace, indent=1) + "\n")
    _manifest("visualize", config, seed, inputs, [out, trace_path], t0, out.parent)
    print(f"drew {len(locations)} boxes into {out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="roiscope", description="Recurrent attention scoring of stained tissue tiles.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, train_flags=False):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
        if train_flags:
            sp.add_argument("--ablation")
            sp.add_argument("--steps", type=int, help="training epochs")
            sp.add_argument("--rois", type=int, help="glimpses per episode")
            sp.add_argument("--roi-size", type=int)
            sp.add_argument("--lambda", dest="lam", type=float)
            sp.add_argument("--mode", choices=("hybrid", "strict"))

    s = sub.add_parser("gen-data", help="write a synthetic tile dataset")
    common(s)
    s.add_argument("--n-train", type=int, default=400)
    s.add_argument("--n-val", type=int, default=100)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("gen-slide", help="write a synthetic slide as a tile grid")
    common(s)
    s.add_argument("--score", type=int, required=True)
    s.add_argument("--rows", type=int, default=4)
    s.add_argument("--cols", type=int, default=4)
    s.add_argument("--slide-seed", type=int, default=0)
    s.set_defaults(func=cmd_gen_slide)

    s = sub.add_parser("train", help="train a model")
    common(s, train_flags=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=("val", "train", "all"), default="val")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="compare training arms")
    common(s, train_flags=True)
    s.add_argument("--data", required=True)
    s.add_argument("--arms", default="full,no_ior,no_sc,random_uniform,random_stain")
    s.add_argument("--seeds", help="comma-separated seeds")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", help="sweep one setting")
    common(s, train_flags=True)
    s.add_argument("--data", required=True)
    s.add_argument("--name", required=True, help="rois, roi_size or scales")
    s.add_argument("--values", required=True, help="semicolon-separated JSON values")
    s.add_argument("--seeds", help="comma-separated seeds")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("score-slide", help="score a slide from its tiles")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--slide", required=True)
    s.set_defaults(func=cmd_score_slide)

    s = sub.add_parser("visualize", help="draw attended boxes over a tile")
    common(s)
    s.add_argument("--tile", required=True)
    s.add_argument("--trace", help="JSON trace with a 'locations' list")
    s.add_argument("--checkpoint")
    s.add_argument("--roi-size", type=int)
    s.set_defaults(func=cmd_visualize)
    return p


def _apply_threads() -> None:
    n = os.environ.get(THREADS_ENV)
    if n:
        for var in _THREAD_VARS:
            os.environ[var] = n


def main(argv=None) -> int:
    _apply_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")

    from .imaging import RasterError
    from .nn import CheckpointError
    from .policy import NumericalError
    from .synthenv import GeneratorError, LabelOracleError

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RasterError, CheckpointError, GeneratorError, LabelOracleError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
