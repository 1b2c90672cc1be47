"""End-to-end pipeline used by the command line: data -> socket -> caches -> plugs -> metrics."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .calibrate import CalibrationHyper, CalibrationRun, calibrate, save_run
from .config import ExperimentConfig
from .data import SynthSpec, WindowedDataset, generate_synthetic, load_csv, prepare_dataset
from .evaluate import MetricsTable, evaluate, mtlc_report, promotion
from .exceptions import ConfigError
from .plug import build_bank, partition_targets
from .sockets import (cache_dataset, load_prediction_caches, load_socket, make_socket,
                      save_prediction_caches)

log = logging.getLogger(__name__)


def load_dataset(cfg: ExperimentConfig) -> WindowedDataset:
    if cfg.dataset == "synthetic":
        spec = SynthSpec(periods=cfg.synth_periods, noise_std=cfg.synth_noise_std,
                         slopes=cfg.synth_slopes, rho=cfg.synth_rho, length=cfg.synth_length,
                         seed=cfg.seed)
        series = generate_synthetic(spec, name=cfg.dataset_name)
    else:
        series = load_csv(cfg.dataset, name=cfg.dataset_name)
    return prepare_dataset(series, cfg.T, cfg.S, cfg.split)


def socket_hyper(cfg: ExperimentConfig):
    common = dict(lr=cfg.socket_lr, patience=cfg.socket_patience, max_epochs=cfg.socket_max_epochs,
                  batch_size=cfg.socket_batch_size, seed=cfg.socket_seed)
    if cfg.socket == "linear-decomp":
        return dict(common, kernel_size=cfg.socket_kernel)
    return dict(common, hidden=cfg.socket_hidden)


def train_socket(cfg: ExperimentConfig, dataset: WindowedDataset):
    tr, va = dataset.windows["train"], dataset.windows["val"]
    sock = make_socket(cfg.socket, **socket_hyper(cfg))
    return sock.fit(tr.X, tr.Y, eval_set=(va.X, va.Y))


def obtain_socket(cfg, dataset):
    if cfg.socket_dir:
        return load_socket(cfg.socket_dir)
    return train_socket(cfg, dataset)


def obtain_caches(cfg: ExperimentConfig, out_dir=None):
    """Return ``(caches, socket_or_None)`` for the configured socket.

    Built-in sockets are trained (or loaded) and their forecasts cached under
    ``out_dir/predictions`` when ``out_dir`` is given.
    """
    if cfg.socket == "external":
        return load_prediction_caches(cfg.socket_manifest), None
    dataset = load_dataset(cfg)
    _check_plug_count(cfg, dataset.n_vars, cfg.S)
    sock = obtain_socket(cfg, dataset)
    caches = cache_dataset(sock, dataset)
    if out_dir is not None:
        save_prediction_caches(caches, Path(out_dir) / "predictions")
    return caches, sock


def _check_plug_count(cfg, N, S):
    partition_targets(N, S, cfg.axis, cfg.plug_count_for(N, S))


@dataclass
class RunResult:
    run: CalibrationRun
    base: MetricsTable
    calibrated: MetricsTable

    def summary(self):
        return {
            "base": self.base.to_dict(),
            "calibrated": self.calibrated.to_dict(),
            "promotion": {p.metric: p.promotion for p in promotion(self.base, self.calibrated)},
            "mtlc": mtlc_report(self.run),
        }


def run_calibration(cfg: ExperimentConfig, caches: dict, plug_count=None) -> RunResult:
    for split in ("train", "val", "test"):
        if split not in caches:
            raise ConfigError(f"prediction caches lack the {split} split")
    _, N, S = caches["train"].pred.shape
    M = plug_count if plug_count is not None else cfg.plug_count_for(N, S)
    spec = partition_targets(N, S, cfg.axis, M)
    bank = build_bank(spec, cfg.d, cfg.seed, cfg.parity)
    hyper = CalibrationHyper(cfg.lr, cfg.patience, cfg.batch_size, cfg.max_epochs)
    run = calibrate(caches["train"], caches["val"], bank, hyper, cfg.mode, cfg.seed,
                    parallel=cfg.parallel, n_workers=cfg.workers)
    test = caches["test"]
    base = evaluate(test.pred, test.true)
    calibrated = evaluate(run.bank.predict(test.pred), test.true)
    return RunResult(run, base, calibrated)


def write_run(cfg: ExperimentConfig, result: RunResult, out_dir, socket_digest=None):
    out_dir = Path(out_dir)
    extra = {"d": cfg.d, "parity": int(cfg.parity)}
    if socket_digest:
        extra["socket_digest"] = socket_digest
    save_run(result.run, out_dir, d=cfg.d, extra=extra)
    (out_dir / "metrics.json").write_text(
        json.dumps(result.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out_dir


def run_reference(seed, caches=None, plug_count=None, mode="non-collective", **overrides):
    """Calibrate on the reference synthetic experiment; ``caches`` skips socket training."""
    from .config import reference_config

    cfg = reference_config(seed, mode=mode, **overrides)
    if caches is None:
        caches, _ = obtain_caches(cfg)
    return run_calibration(cfg, caches, plug_count=plug_count)
