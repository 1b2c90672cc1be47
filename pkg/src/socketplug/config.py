"""Flat experiment configuration: JSON file, overridden by command-line flags, fully resolved."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import REFERENCE_SYNTH, default_ratios
from .exceptions import ConfigError


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "synthetic"  # CSV path or "synthetic"
    dataset_name: str | None = None
    synth_periods: list = field(default_factory=lambda: list(REFERENCE_SYNTH["periods"]))
    synth_noise_std: list = field(default_factory=lambda: list(REFERENCE_SYNTH["noise_std"]))
    synth_slopes: list | None = None
    synth_rho: float = REFERENCE_SYNTH["rho"]
    synth_length: int = REFERENCE_SYNTH["length"]
    T: int = 96
    S: int = 96
    split: list | None = None
    # socket
    socket: str = "linear-decomp"  # linear-decomp | mlp | external
    socket_dir: str | None = None  # pre-trained snapshot to load instead of training
    socket_manifest: str | None = None  # prediction manifest for the external kind
    socket_lr: float = 1e-3
    socket_patience: int = 10
    socket_max_epochs: int = 100
    socket_batch_size: int = 32
    socket_kernel: int = 25
    socket_hidden: int = 128
    socket_seed: int | None = None
    # plugs
    axis: str = "variable"
    plug_count: int | str = "target-wise"
    d: int = 256
    lr: float = 1e-4
    patience: int = 5
    batch_size: int = 32
    max_epochs: int = 100
    parity: bool = True
    mode: str = "non-collective"
    # run
    seed: int = 0
    parallel: bool = False
    workers: int | None = None
    output: str = "runs/default"

    def resolve(self, n_vars=None):
        """Fill every derived field so the written config replays the run exactly."""
        if self.dataset_name is None:
            self.dataset_name = "synthetic" if self.dataset == "synthetic" else Path(self.dataset).stem
        if self.split is None:
            self.split = list(default_ratios(self.dataset_name))
        if self.socket_seed is None:
            self.socket_seed = self.seed
        if self.synth_slopes is None:
            self.synth_slopes = [0.0] * len(self.synth_periods)
        if isinstance(self.plug_count, str):
            if self.plug_count != "target-wise":
                try:
                    self.plug_count = int(self.plug_count)
                except ValueError:
                    raise ConfigError(
                        f"plug_count must be an integer or 'target-wise', got {self.plug_count!r}"
                    ) from None
        if self.mode not in ("non-collective", "collective"):
            raise ConfigError(f"mode must be 'non-collective' or 'collective', got {self.mode!r}")
        if self.axis not in ("variable", "step"):
            raise ConfigError(f"axis must be 'variable' or 'step', got {self.axis!r}")
        if self.socket not in ("linear-decomp", "mlp", "external"):
            raise ConfigError(f"unknown socket kind {self.socket!r}")
        if self.socket == "external" and not self.socket_manifest:
            raise ConfigError("socket=external needs socket_manifest")
        return self

    def plug_count_for(self, N, S):
        """``target-wise`` becomes N (variable axis) or S (step axis)."""
        if self.plug_count == "target-wise":
            return N if self.axis == "variable" else S
        return int(self.plug_count)

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a flat JSON object")
        return cls.from_dict(data)


def reference_config(seed=0, **overrides) -> ExperimentConfig:
    """The desk-scale reference experiment: six synthetic variables of graded noise."""
    base = dict(dataset="synthetic", T=96, S=96, socket="linear-decomp", socket_max_epochs=5,
                axis="variable", plug_count="target-wise", d=32, lr=1e-3, patience=5,
                max_epochs=60, seed=seed)
    base.update(overrides)
    return ExperimentConfig(**base).resolve()
