"""Release gate: one test per acceptance criterion, each logging a PASS/FAIL line.

The learning criteria train real models and dominate the runtime (about an hour
on one core).  Every verdict is collected by ``conftest`` and printed in the
terminal summary.
"""

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

import conftest
from fd_cases import CASES, TINY_ENV, tiny_net, worst_error
from oracles import bandit_analytic, brute_ior
from roiscope.aggregate import contest_score, dominant_class, pcms
from roiscope.cli import main
from roiscope.policy import PolicyConfig, bandit_gradient, ior_penalty
from roiscope.synthenv import EnvConfig, gen_tile
from roiscope.train import TileBank, TrainConfig, evaluate_bank, format_table, run_ablation, run_sweep, train_banks

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.json"


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.VERDICTS.append(line)
    print(line)
    assert ok, line


def desk_config() -> TrainConfig:
    raw = json.loads(DESK_CONFIG.read_text())
    raw.pop("env", None)
    return TrainConfig.from_dict(raw)


def bank(env: EnvConfig, seeds, classes=range(4)) -> TileBank:
    return TileBank(gen_tile(env, c, s) for c in classes for s in seeds)


def test_1_gradient_fidelity():
    t0 = time.perf_counter()
    worst = {name: max(worst_error(*case(seed)) for seed in range(20)) for name, case in CASES.items()}
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-4 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(1, ok, f"20 seeds per op, worst relative error {detail}; {elapsed:.1f} s")


def test_2_reinforce_unbiased():
    cases = [((0.45, 0.55), (0.4, 0.6, 0.5, 0.7)), ((0.3, 0.6), (0.35, 0.5, 0.45, 0.75))]
    zs = []
    for i, (mu, box) in enumerate(cases):
        mean, se = bandit_gradient(mu, 0.1, box, 100_000, np.random.default_rng(100 + i))
        zs.append(np.abs(mean - bandit_analytic(np.array(mu), 0.1, box)) / se)
    worst = float(np.max(zs))
    verdict(2, worst <= 3, f"1e5 episodes, largest deviation {worst:.2f} standard errors")


def test_3_ior_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        T = int(rng.integers(2, 9))
        locs = rng.uniform(size=(T, 2))
        if rng.random() < 0.5:
            locs = 0.5 + 0.1 * (locs - 0.5)
        worst = max(worst, abs(ior_penalty(locs, 16, (256, 256)) - brute_ior(locs, 16, (256, 256))))
    coincident = ior_penalty([(0.37, 0.61), (0.37, 0.61)], 16, (256, 256))
    disjoint = ior_penalty([(0.1, 0.1), (0.9, 0.1), (0.1, 0.9), (0.9, 0.9)], 16, (256, 256))
    ok = worst <= 1e-9 and coincident == 1.0 and disjoint == 0.0
    verdict(3, ok, f"200 sets, max |closed form - pixel count| {worst:.1e}; coincident {coincident}, "
                   f"disjoint {disjoint}")


def test_4_loss_bookkeeping():
    tr = bank(TINY_ENV, range(4))
    va = bank(TINY_ENV, range(100, 102))
    worst, steps = 0.0, 0
    for mode in ("hybrid", "strict"):
        cfg = TrainConfig(net=tiny_net(), policy=PolicyConfig(T=4, mode=mode), epochs=3, batch_size=5)
        _, report = train_banks(tr, va, cfg)
        for total, l_theta, l_sc, l_ior, lam in report.steps:
            worst = max(worst, abs(total - (l_theta + lam * (l_sc + l_ior))))
        steps += len(report.steps)
    verdict(4, worst <= 1e-12, f"{steps} steps, max |L - (L_theta + lambda (L_sc + L_IoR))| {worst:.1e}")


def test_5_desk_learning():
    cfg = desk_config()
    env = EnvConfig()
    tr = bank(env, range(400))
    va = bank(env, range(400, 500))

    t0 = time.perf_counter()

    # past the time budget the criterion can no longer pass
    def stop(stats, params):
        return stats.val["combined"] >= 0.90 or time.perf_counter() - t0 >= 30 * 60

    params, report = train_banks(tr, va, cfg, on_epoch=stop)
    learned = evaluate_bank(params, cfg, va)
    uniform = evaluate_bank(params, cfg, va, agent="uniform")
    gap = learned.hit_rate - uniform.hit_rate
    minutes = report.wall_clock / 60
    ok = (learned.combined >= 0.90 and len(report.epochs) <= 50 and minutes < 30 and gap >= 0.15)
    verdict(5, ok, f"combined {learned.combined:.3f} after {len(report.epochs)} epochs in {minutes:.1f} min; "
                   f"hit rate {learned.hit_rate:.3f} vs uniform {uniform.hit_rate:.3f} (gap {gap:+.3f})")


# the sparse-signal set for the ablation: smaller than the desk run so nine trainings fit
ABLATION_TRAIN, ABLATION_VAL, ABLATION_EPOCHS = range(100), range(100, 150), 15


def test_6_ablation_ordering():
    cfg = replace(desk_config(), epochs=ABLATION_EPOCHS)
    env = EnvConfig()
    tr, va = bank(env, ABLATION_TRAIN), bank(env, ABLATION_VAL)
    results = run_ablation(tr, va, cfg, arms=("full", "no_ior", "random_uniform"), seeds=(0, 1, 2))
    acc = {r.arm: r.combined for r in results}
    ok = acc["full"] >= acc["no_ior"] - 0.01 and acc["no_ior"] >= acc["random_uniform"] - 0.01
    print(format_table(results, title="ablation"))
    verdict(6, ok, "combined accuracy over 3 seeds: "
                   + ", ".join(f"{k} {v:.3f}" for k, v in acc.items()))


def test_7_sweeps(tmp_path):
    cfg = replace(desk_config(), epochs=1)
    env = EnvConfig()
    tr, va = bank(env, range(3)), bank(env, range(3, 5))
    tables = {}
    for name, values in (("rois", [4, 5, 6, 8]), ("roi_size", [8, 12, 16])):
        rows = run_sweep(tr, va, cfg, name, values)
        tables[name] = format_table(rows, title=f"sweep {name}")
        (tmp_path / f"sweep_{name}.txt").write_text(tables[name])
    shapes = {k: len(v.strip().splitlines()) - 2 for k, v in tables.items()}
    header_ok = all(t.splitlines()[1].split() == ["arm", "0", "1+", "2+", "3+", "Acc_comb", "hit_rate"]
                    for t in tables.values())
    ok = shapes == {"rois": 4, "roi_size": 3} and header_ok
    verdict(7, ok, f"table rows {shapes}")


def test_8_aggregation_exact():
    checks = [
        dominant_class([0] * 3 + [1] * 5 + [2, 3]) == 1,
        dominant_class([2]) == 2,
        dominant_class([0] * 4 + [1] * 4) == 0,
        pcms([0, 1, 2, 3], [1, 1, 1, 1]).tolist() == [0.25, 0.25, 0.25, 0.25],
        pcms([1, 1, 1], [3, 5, 2]).tolist() == [0, 1, 0, 0],
        pcms([0, 3], [10, 30]).tolist() == [0.25, 0, 0, 0.75],
        contest_score(2, 2, [0, 0, 1, 0], [0, 0, 1, 0], [2], [0.7]).points == 15,
        contest_score(3, 0, [0, 0, 0, 1], [1, 0, 0, 0], [3], [0.7]).points == 0,
    ]
    agree = contest_score(1, 1, [0, 1, 0, 0], [0, 1, 0, 0], [1, 1, 1], [1.0, 1.0, 1.0])
    checks += [agree.weighted_confidence == 1.0, agree.combined == agree.points + agree.bonus]
    verdict(8, all(checks), f"{sum(checks)}/{len(checks)} worked examples exact")


def test_9_determinism(tmp_path):
    cfg = {"env": TINY_ENV.to_dict(), "net": tiny_net().to_dict(), "policy": {"T": 3}, "epochs": 2,
           "batch_size": 4}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["gen-data", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "data"),
                 "--n-train", "3", "--n-val", "2"]) == 0
    for run in ("a", "b"):
        assert main(["train", "--config", str(tmp_path / "cfg.json"), "--data", str(tmp_path / "data"),
                     "--out", str(tmp_path / run)]) == 0
    names = ("checkpoint.bin", "checkpoint.json", "report.json")
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    verdict(9, all(same), "byte-identical " + ", ".join(n for n, s in zip(names, same) if s))
