"""Socket+Plug calibration of frozen multivariate forecasters.

A *socket* is a trained forecaster whose parameters never change; *plugs* are
small LayerNorm-gated MLPs trained on the socket's cached forecasts, one per
group of targets, each with its own optimizer and early stopping.
"""
from .calibrate import CalibrationHyper, PlugCalibrator, calibrate, calibrate_parallel, transfer_plugs
from .config import ExperimentConfig, reference_config
from .data import SynthSpec, generate_synthetic, load_csv, prepare_dataset
from .evaluate import emit_report, evaluate, mtlc_report, promotion
from .plug import Plug, PlugBank, build_bank, partition_targets, plug_hidden_width
from .sockets import ExternalSocket, LinearDecompSocket, MLPSocket, cache_dataset

__all__ = [
    "CalibrationHyper", "PlugCalibrator", "calibrate", "calibrate_parallel", "transfer_plugs",
    "ExperimentConfig", "reference_config", "SynthSpec", "generate_synthetic", "load_csv",
    "prepare_dataset", "emit_report", "evaluate", "mtlc_report", "promotion", "Plug", "PlugBank",
    "build_bank", "partition_targets", "plug_hidden_width", "ExternalSocket", "LinearDecompSocket",
    "MLPSocket", "cache_dataset",
]
