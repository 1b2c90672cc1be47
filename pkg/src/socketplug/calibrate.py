"""Plug training against cached socket forecasts.

Non-collective mode gives every plug its own Adam optimizer and early-stopping
monitor; collective mode shares one optimizer and one monitor on the summed
validation loss. All plugs see the same seed-derived batch order, so a plug's
trajectory does not depend on which other plugs are trained alongside it.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, TrainingError
from .manifest import read_manifest, write_manifest
from .numerics import Adam, Tape
from .plug import PlugBank, build_bank, load_bank, partition_targets, save_bank
from .sockets import PredictionCache
from .training import STOP, Monitor, epoch_batches, monitor_update  # noqa: F401  (re-export)
from .validation import check_same_shape, check_windows

log = logging.getLogger(__name__)

MODES = ("non-collective", "collective")


@dataclass
class CalibrationHyper:
    lr: float = 1e-4
    patience: int = 5
    batch_size: int = 32
    max_epochs: int = 100

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError(f"invalid calibration hyperparameters {asdict(self)}")


@dataclass
class PlugRecord:
    plug_id: int
    train_curve: list = field(default_factory=list)
    val_curve: list = field(default_factory=list)
    stop_epoch: int = 0
    best_epoch: int = 0
    best_val: float = float("inf")
    triggered: bool = False


@dataclass
class CalibrationRun:
    mode: str
    seed: int
    hyper: CalibrationHyper
    bank: PlugBank  # best snapshots
    records: list
    total_val_curve: list = field(default_factory=list)
    optimizers: list = field(default_factory=list)
    monitors: list = field(default_factory=list)

    @property
    def spec(self):
        return self.bank.spec

    @property
    def stop_epochs(self):
        return [r.stop_epoch for r in self.records]


class _PlugTrainer:
    """Owns one plug's data slices, parameters, optimizer and monitor."""

    def __init__(self, plug, spec, i, train, val, hyper, seed, weight=1.0, own_optimizer=True,
                 frozen=False):
        self.plug = plug
        self.i = i
        self.x = spec.gather(train.pred, i)
        self.y = spec.gather(train.true, i)
        self.xv = spec.gather(val.pred, i)
        self.yv = spec.gather(val.true, i)
        self.hyper = hyper
        self.seed = seed
        self.weight = weight
        self.opt = Adam(plug.arrays(), lr=hyper.lr) if own_optimizer and not frozen else None
        self.monitor = Monitor(hyper.patience)
        self.best = plug.copy()
        self.record = PlugRecord(i)
        self.done = frozen

    def batch_grads(self, idx):
        tape = Tape()
        nodes = [tape.param(a) for a in self.plug.arrays()]
        out = self.plug.build(tape, tape.constant(self.x[idx]), nodes)
        loss = tape.mse(out, self.y[idx], weight=self.weight)
        lv = float(loss.value)
        if not np.isfinite(lv):
            raise TrainingError(f"plug {self.i}: non-finite training loss")
        return lv, tape.backward(loss)

    def val_sse(self):
        pred = self.plug.forward(self.xv).astype(np.float64)
        d = pred - self.yv.astype(np.float64)
        sse = float(np.sum(d * d))
        if not np.isfinite(sse):
            raise TrainingError(f"plug {self.i}: non-finite validation loss")
        return sse

    def run_epoch(self, epoch):
        """Train one epoch with the plug's own optimizer; returns (train_loss, val_loss)."""
        total, n = 0.0, 0
        for idx in epoch_batches(len(self.x), self.hyper.batch_size, self.seed, epoch):
            lv, grads = self.batch_grads(idx)
            self.opt.step(grads)
            total += lv * len(idx)
            n += len(idx)
        return total / n, self.val_sse() / self.yv.size

    def log_epoch(self, epoch, train_loss, val_loss):
        self.record.train_curve.append(train_loss)
        self.record.val_curve.append(val_loss)
        self.record.stop_epoch = epoch

    def take_snapshot(self):
        self.best = self.plug.copy()

    def end_epoch(self, epoch, train_loss, val_loss):
        self.log_epoch(epoch, train_loss, val_loss)
        decision = self.monitor.update(val_loss, epoch)
        if self.monitor.improved:
            self.take_snapshot()
        if decision == STOP:
            self.finish(triggered=True)

    def finish(self, triggered=False):
        self.done = True
        self.record.triggered = triggered
        self.record.best_epoch = self.monitor.best_epoch
        self.record.best_val = self.monitor.best_val


def _check_caches(train: PredictionCache, val: PredictionCache, bank: PlugBank):
    for c in (train, val):
        if len(c) == 0:
            raise ConfigError(f"{c.split} prediction cache is empty")
        check_same_shape(c.pred, c.true, (f"{c.split} predictions", f"{c.split} targets"))
    if train.pred.shape[1:] != val.pred.shape[1:]:
        raise ConfigError("train and val caches disagree on (N, S)")
    if train.pred.shape[1:] != (bank.spec.n_vars, bank.spec.horizon):
        raise ConfigError(
            f"bank built for (N, S)=({bank.spec.n_vars}, {bank.spec.horizon}) "
            f"but caches have {train.pred.shape[1:]}"
        )


def _finalize(trainers, bank, mode, seed, hyper, total_curve=(), monitors=None, optimizers=None):
    out = bank.copy()
    for t in trainers:
        if not t.done:
            t.finish(triggered=False)
        out.plugs[t.i] = t.best
    records = [t.record for t in trainers]
    return CalibrationRun(
        mode, seed, hyper, out, records, list(total_curve),
        optimizers if optimizers is not None else [t.opt for t in trainers],
        monitors if monitors is not None else [t.monitor for t in trainers],
    )


def calibrate(cache_train, cache_val, bank: PlugBank, hyper=None, mode="non-collective", seed=0,
              parallel=False, n_workers=None) -> CalibrationRun:
    """Train every non-frozen plug of ``bank`` (a working copy; ``bank`` is untouched)."""
    hyper = hyper or CalibrationHyper()
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    _check_caches(cache_train, cache_val, bank)
    work = bank.copy()
    if mode == "collective":
        if parallel:
            log.info("collective mode shares one optimizer; running sequentially")
        return _calibrate_collective(cache_train, cache_val, work, hyper, seed)
    trainers = [
        _PlugTrainer(p, work.spec, i, cache_train, cache_val, hyper, seed, frozen=work.frozen[i])
        for i, p in enumerate(work.plugs)
    ]
    active = [t for t in trainers if not t.done]
    if parallel:
        _run_parallel(active, hyper, n_workers)
    else:
        for t in active:
            for epoch in range(1, hyper.max_epochs + 1):
                t.end_epoch(epoch, *t.run_epoch(epoch))
                if t.done:
                    break
    return _finalize(trainers, bank, mode, seed, hyper)


def _run_parallel(trainers, hyper, n_workers):
    n_workers = n_workers or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        for epoch in range(1, hyper.max_epochs + 1):
            live = [t for t in trainers if not t.done]
            if not live:
                break
            results = list(pool.map(lambda t: t.run_epoch(epoch), live))
            # per-epoch barrier; monitors are updated in plug order
            for t, (tl, vl) in zip(live, results):
                t.end_epoch(epoch, tl, vl)


def calibrate_parallel(cache_train, cache_val, bank, hyper=None, mode="non-collective", seed=0,
                       n_workers=None) -> CalibrationRun:
    """Same result as :func:`calibrate`, with plugs trained concurrently by a thread pool."""
    return calibrate(cache_train, cache_val, bank, hyper, mode, seed, parallel=True,
                     n_workers=n_workers)


def _calibrate_collective(train, val, bank, hyper, seed):
    total_io = sum(bank.spec.group_io_size(i) for i in range(bank.plug_count))
    trainers = []
    for i, p in enumerate(bank.plugs):
        w = bank.spec.group_io_size(i) / total_io
        trainers.append(_PlugTrainer(p, bank.spec, i, train, val, hyper, seed, weight=w,
                                     own_optimizer=False, frozen=bank.frozen[i]))
    active = [t for t in trainers if not t.done]
    if not active:
        return _finalize(trainers, bank, "collective", seed, hyper)
    opt = Adam([a for t in active for a in t.plug.arrays()], lr=hyper.lr)
    monitor = Monitor(hyper.patience)
    n = len(active[0].x)
    val_count = sum(t.yv.size for t in active)
    total_curve = []
    for epoch in range(1, hyper.max_epochs + 1):
        sums = [0.0] * len(active)
        for idx in epoch_batches(n, hyper.batch_size, seed, epoch):
            grads = []
            for k, t in enumerate(active):
                lv, g = t.batch_grads(idx)
                sums[k] += lv * len(idx)
                grads.extend(g)
            opt.step(grads)
        sses = [t.val_sse() for t in active]
        total_val = sum(sses) / val_count
        total_curve.append(total_val)
        for k, t in enumerate(active):
            t.log_epoch(epoch, sums[k] / n, sses[k] / t.yv.size)
        decision = monitor.update(total_val, epoch)
        if monitor.improved:
            for t in active:
                t.take_snapshot()
        if decision == STOP:
            break
    for t in active:
        t.monitor = monitor
        t.finish(triggered=monitor.triggered)
        t.record.best_val = t.record.val_curve[monitor.best_epoch - 1]
    return _finalize(trainers, bank, "collective", seed, hyper, total_curve,
                     monitors=[monitor], optimizers=[opt])


# ---------------------------------------------------------------------------
# estimator front end
# ---------------------------------------------------------------------------

class PlugCalibrator(BaseEstimator):
    """Calibrate a frozen forecaster's outputs with a bank of plugs.

    ``fit`` takes socket forecasts and ground truth shaped ``(n, N, S)`` plus an
    ``eval_set`` for early stopping; ``predict`` maps forecasts to calibrated
    forecasts of the same shape.
    """

    def __init__(self, axis="variable", plug_count=None, d=256, lr=1e-4, patience=5,
                 batch_size=32, max_epochs=100, mode="non-collective", parity=True,
                 parallel=False, n_workers=None, seed=0):
        self.axis = axis
        self.plug_count = plug_count
        self.d = d
        self.lr = lr
        self.patience = patience
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.mode = mode
        self.parity = parity
        self.parallel = parallel
        self.n_workers = n_workers
        self.seed = seed

    def _hyper(self):
        return CalibrationHyper(self.lr, self.patience, self.batch_size, self.max_epochs)

    def fit(self, Y_hat, Y, eval_set=None):
        Y_hat = check_windows(Y_hat, "Y_hat")
        Y = check_windows(Y, "Y")
        check_same_shape(Y_hat, Y, ("Y_hat", "Y"))
        if eval_set is None:
            raise ConfigError("PlugCalibrator.fit needs eval_set=(Y_hat_val, Y_val) for early stopping")
        Yv_hat, Yv = (check_windows(a, n) for a, n in zip(eval_set, ("Y_hat_val", "Y_val")))
        return self.fit_caches(PredictionCache("train", Y_hat, Y), PredictionCache("val", Yv_hat, Yv))

    def fit_caches(self, cache_train, cache_val, bank=None):
        _, N, S = cache_train.pred.shape
        if bank is None:
            spec = partition_targets(N, S, self.axis, self.plug_count)
            bank = build_bank(spec, self.d, self.seed, self.parity)
        self.run_ = calibrate(cache_train, cache_val, bank, self._hyper(), self.mode, self.seed,
                              parallel=self.parallel, n_workers=self.n_workers)
        self.bank_ = self.run_.bank
        self.n_vars_, self.horizon_ = N, S
        return self

    def predict(self, Y_hat):
        check_is_fitted(self, "bank_")
        return self.bank_.predict(check_windows(Y_hat, "Y_hat"))

    def score(self, Y_hat, Y):
        d = self.predict(Y_hat).astype(np.float64) - np.asarray(Y, dtype=np.float64)
        return -float(np.mean(d * d))


# ---------------------------------------------------------------------------
# transfer
# ---------------------------------------------------------------------------

def transfer_plugs(bank: PlugBank, foreign: PredictionCache):
    """Apply trained plugs, unchanged, to another socket's forecasts.

    Returns ``(base_metrics, calibrated_metrics, promotions)``. A worse
    calibrated score is reported, not raised.
    """
    from .evaluate import evaluate, promotion

    if foreign.pred.shape[1:] != (bank.spec.n_vars, bank.spec.horizon):
        raise ConfigError(
            f"plugs expect (N, S)=({bank.spec.n_vars}, {bank.spec.horizon}), "
            f"foreign cache has {foreign.pred.shape[1:]}"
        )
    base = evaluate(foreign.pred, foreign.true)
    calibrated = evaluate(bank.predict(foreign.pred), foreign.true)
    return base, calibrated, promotion(base, calibrated)


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------

def save_run(run: CalibrationRun, directory, d=None, extra=None):
    """Write manifest, plug snapshots, loss curves and stop epochs under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec = run.spec
    entries = {
        "format": "sop-run", "version": 1, "mode": run.mode, "seed": run.seed,
        "axis": spec.axis, "N": spec.n_vars, "S": spec.horizon, "plug_count": spec.plug_count,
        "groups": json.dumps([list(g) for g in spec.groups]),
        **{f"hyper.{k}": v for k, v in asdict(run.hyper).items()},
    }
    if extra:
        entries.update(extra)
    write_manifest(directory / "run.manifest", entries)
    save_bank(run.bank, directory / "plugs", d=d)
    with open(directory / "loss_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "plug_id", "train_loss", "val_loss"])
        for r in run.records:
            for e, (tl, vl) in enumerate(zip(r.train_curve, r.val_curve), start=1):
                w.writerow([e, r.plug_id, repr(tl), repr(vl)])
    with open(directory / "stop_epochs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plug_id", "stop_epoch", "best_epoch", "best_val", "triggered"])
        for r in run.records:
            w.writerow([r.plug_id, r.stop_epoch, r.best_epoch, repr(r.best_val), int(r.triggered)])
    return directory


def load_run_bank(directory):
    directory = Path(directory)
    return read_manifest(directory / "run.manifest"), load_bank(directory / "plugs")
