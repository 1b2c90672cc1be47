"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL summary that is printed at the end of
the pytest session.
"""
import functools
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from socketplug.calibrate import CalibrationHyper, calibrate, transfer_plugs
from socketplug.config import ExperimentConfig, reference_config
from socketplug.data import load_csv, prepare_dataset
from socketplug.evaluate import emit_report, evaluate, mtlc_report, promotion_pct
from socketplug.experiment import load_dataset, obtain_caches, run_calibration, train_socket
from socketplug.numerics import Adam, layer_norm
from socketplug.plug import (build_bank, partition_targets, plug_hidden_width, plug_weight_count)
from socketplug.sockets import cache_dataset

from _helpers import directional_fd_error, elementwise_fd_error, random_plug_case

pytestmark = pytest.mark.slow

SEEDS = range(10)
ETTH1_ENV = "SOCKETPLUG_ETTH1"


def record(k, name, ok, detail):
    ACCEPTANCE_LINES[k] = f"criterion {k:>2} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(ACCEPTANCE_LINES[k])
    assert ok, ACCEPTANCE_LINES[k]


@functools.lru_cache(maxsize=None)
def reference_socket(seed):
    """Socket, its caches and its digest at creation time."""
    cfg = reference_config(seed)
    caches, sock = obtain_caches(cfg)
    return sock, caches, sock.digest()


@functools.lru_cache(maxsize=None)
def reference_runs(seed):
    """Variable-wise and collective (single plug) runs plus wall-clock seconds for each."""
    cfg = reference_config(seed)
    _, caches, _ = reference_socket(seed)
    t0 = time.perf_counter()
    var_wise = run_calibration(cfg, caches)
    t1 = time.perf_counter()
    cfg_c = reference_config(seed, mode="collective")
    collective = run_calibration(cfg_c, caches, plug_count=1)
    t2 = time.perf_counter()
    return var_wise, collective, t1 - t0, t2 - t1


def test_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    errs32, errs64 = [], []
    for _ in range(12):
        plug, x, y = random_plug_case(rng)
        errs32.append(directional_fd_error(plug, x, y, rng))
    for _ in range(3):
        plug, x, y = random_plug_case(rng, io=int(rng.integers(2, 7)), hidden=int(rng.integers(1, 5)))
        errs64.append(elementwise_fd_error(plug, x, y))
    dt = time.perf_counter() - t0
    ok = max(errs32) < 1e-3 and max(errs64) < 1e-3 and dt < 10
    record(1, "gradient correctness", ok,
           f"12 configs, max rel err 32-bit {max(errs32):.2e}, 64-bit {max(errs64):.2e}, {dt:.1f}s")


def test_adam_oracle():
    w = np.zeros(1, np.float32)
    Adam([w], lr=0.1).step([np.ones(1, np.float32)])
    hand = -0.1 * (1 / (1 + 1e-8))
    p = np.random.default_rng(0).normal(size=(4, 3)).astype(np.float32)
    before = p.copy()
    opt = Adam([p])
    for _ in range(10):
        opt.step([np.zeros_like(p)])
    ok = abs(float(w[0]) - hand) < 1e-6 and np.array_equal(p, before)
    record(2, "adam oracle", ok, f"w={float(w[0]):.8f} vs {hand:.8f}; zero-grad no-op")


def test_layer_norm_statistics():
    rng = np.random.default_rng(3)
    worst_mean = worst_var = 0.0
    for _ in range(1000):
        L = int(rng.integers(8, 513))
        v = (rng.normal(rng.uniform(-10, 10), rng.uniform(0.5, 10), L)).astype(np.float32)
        out = layer_norm(v).astype(np.float64)
        worst_mean = max(worst_mean, abs(out.mean()))
        worst_var = max(worst_var, abs(out.var() - 1))
    zero_ok = all(not layer_norm(np.full(L, c, np.float32)).any()
                  for L, c in ((8, 5.0), (100, -3.7), (512, 1.803245962283711), (37, 1e4)))
    bank = build_bank(partition_targets(4, 12, "variable", 4), d=8, seed=1)
    const = np.broadcast_to(rng.normal(size=(1, 4, 1)), (5, 4, 12)).astype(np.float32)
    plug_ok = not bank.predict(const).any()
    ok = worst_mean < 1e-6 and worst_var < 1e-4 and zero_ok and plug_ok
    record(3, "layer-norm statistics", ok,
           f"|mean|<={worst_mean:.1e}, |var-1|<={worst_var:.1e}, constant->0: {zero_ok and plug_ok}")


def test_single_plug_collective_equivalence():
    same = []
    for seed in range(3):
        cfg = reference_config(seed)
        _, caches, _ = reference_socket(seed)
        a = run_calibration(cfg, caches, plug_count=1).run
        b = reference_runs(seed)[1].run
        same.append(a.records[0].val_curve == b.records[0].val_curve
                    and a.records[0].train_curve == b.records[0].train_curve
                    and a.bank.digests() == b.bank.digests())
    record(4, "single-plug collective equivalence", all(same),
           f"bit-identical curves and snapshots for {sum(same)}/3 seeds")


def test_parallel_equals_sequential():
    t0 = time.perf_counter()
    hyper = CalibrationHyper(lr=1e-3, patience=5, max_epochs=10)
    matches, total = 0, 0
    for seed in range(3):
        _, caches, _ = reference_socket(seed)
        for M in (2, 4, 6):
            bank = build_bank(partition_targets(6, 96, "variable", M), d=32, seed=seed)
            seq = calibrate(caches["train"], caches["val"], bank, hyper, seed=seed)
            par = calibrate(caches["train"], caches["val"], bank, hyper, seed=seed, parallel=True,
                            n_workers=M)
            matches += seq.bank.digests() == par.bank.digests()
            total += 1
    dt = time.perf_counter() - t0
    record(5, "parallel equals sequential", matches == total and dt < 120,
           f"{matches}/{total} digest matches, {dt:.1f}s, {os.cpu_count()} cpu(s)")


def test_mtlc_stop_epoch_spread():
    ranges, secs = [], 0.0
    for seed in SEEDS:
        var_wise, _, t_var, _ = reference_runs(seed)
        ranges.append(mtlc_report(var_wise.run)["stop_range"])
        secs += t_var
    hits = sum(r >= 3 for r in ranges)
    record(7, "MTLC stop-epoch spread", hits >= 8 and secs < 300,
           f"range>=3 in {hits}/10 seeds, ranges {ranges}, calibration {secs:.0f}s")


def test_non_collective_beats_collective():
    diffs, secs = [], 0.0
    for seed in SEEDS:
        var_wise, collective, t_var, t_col = reference_runs(seed)
        diffs.append(collective.calibrated.mse - var_wise.calibrated.mse)
        secs += t_var + t_col
    wins = sum(d > 0 for d in diffs)
    record(8, "non-collective beats collective", wins >= 7 and np.mean(diffs) > 0 and secs < 600,
           f"wins {wins}/10, mean MSE gain {np.mean(diffs):.4f}, {secs:.0f}s")


def _etth1_path():
    env = os.environ.get(ETTH1_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[1] / "data" / "ETTh1.csv"


def test_etth1_benchmark():
    path = _etth1_path()
    if not path.is_file():
        record(9, "ETTh1 benchmark", False,
               f"ETTh1 CSV not found at {path}; set {ETTH1_ENV} to the public file")
    t0 = time.perf_counter()
    series = load_csv(path, name="ETTh1")
    ok_rows, promos = [], []
    for seed in range(3):
        cfg = ExperimentConfig(dataset=str(path), dataset_name="ETTh1", T=96, S=96,
                               socket="linear-decomp", d=256, lr=1e-4, patience=5,
                               seed=seed).resolve()
        dataset = prepare_dataset(series, 96, 96, cfg.split)
        caches = cache_dataset(train_socket(cfg, dataset), dataset)
        res = run_calibration(cfg, caches)
        ok_rows.append(res.calibrated.mse <= res.base.mse * 1.005)
        promos.append(promotion_pct(res.base.mse, res.calibrated.mse))
    dt = time.perf_counter() - t0
    record(9, "ETTh1 benchmark", all(ok_rows) and np.mean(promos) >= 0.5,
           f"N={series.n_vars}, promotions {[round(p, 3) for p in promos]}%, {dt:.0f}s")


# (base MSE, calibrated MSE, printed promotion %) for five benchmark result rows
PUBLISHED_ROWS = {
    "SOFTS / ECL": (0.175, 0.170, 2.768),
    "iTransformer / Exchange": (0.382, 0.295, 22.907),
    "TimesNet / Exchange": (0.422, 0.338, 19.986),
    "DLinear / ECL": (0.213, 0.182, 14.396),
    "DLinear / ETTh1": (0.461, 0.451, 2.146),
}


def test_promotion_arithmetic():
    gaps = {k: abs(promotion_pct(b, c) - p) for k, (b, c, p) in PUBLISHED_ROWS.items()}
    worst = max(gaps, key=gaps.get)
    record(10, "promotion arithmetic", all(g <= 0.2 for g in gaps.values()),
           f"5 rows, worst gap {gaps[worst]:.3f} pp ({worst})")


def test_parameter_parity():
    single = plug_weight_count(96, 256)
    gaps = {}
    for M in (7, 3, 1):
        spec = partition_targets(21, 96, "variable", M)
        total = sum(plug_weight_count(spec.group_io_size(i),
                                      plug_hidden_width(spec.group_io_size(i), 256, 96, spec.group_size(i)))
                    for i in range(M))
        gaps[M] = abs(total - 21 * single) / (21 * single)
    record(11, "parameter parity", all(g < 0.05 for g in gaps.values()),
           ", ".join(f"M={m}: {g:.3%}" for m, g in gaps.items()))


def test_plug_transfer(tmp_path):
    var_wise, _, _, _ = reference_runs(0)
    _, caches, _ = reference_socket(0)
    _, same, _ = transfer_plugs(var_wise.run.bank, caches["test"])
    noop = same.mse == var_wise.calibrated.mse and same.mae == var_wise.calibrated.mae
    cfg = reference_config(0, socket_seed=101)
    other = train_socket(cfg, load_dataset(cfg))
    foreign = cache_dataset(other, load_dataset(cfg))["test"]
    base, calibrated, promos = transfer_plugs(var_wise.run.bank, foreign)
    rows = [{"metric": p.metric, "base": p.base, "calibrated": p.calibrated, "promotion": p.promotion}
            for p in promos]
    report = emit_report(rows, "csv", tmp_path / "transfer.csv")
    ok = noop and report.is_file() and len(rows) == 2 and all(np.isfinite(r["promotion"]) for r in rows)
    record(12, "plug transfer", ok,
           f"no-op exact: {noop}; foreign socket MSE {base.mse:.4f} -> {calibrated.mse:.4f} "
           f"({promos[0].promotion:+.3f}%)")


def test_socket_immutability():
    # runs last so that every calibration above has touched the cached sockets
    checked = [(seed, sock.digest() == digest)
               for seed, (sock, _, digest) in
               ((s, reference_socket(s)) for s in range(10))]
    ok = all(v for _, v in checked)
    record(6, "socket immutability", ok, f"{sum(v for _, v in checked)}/{len(checked)} socket digests unchanged")
