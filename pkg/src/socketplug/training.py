"""Early-stopping monitor and mini-batch helpers shared by socket and plug training."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import ConfigError, StateError
from .numerics import make_rng

CONTINUE = "continue"
STOP = "stop"


@dataclass
class Monitor:
    """Strict-improvement early stopping: stop after ``patience`` epochs without a new minimum."""

    patience: int = 5
    best_val: float = math.inf
    bad_epochs: int = 0
    best_epoch: int = 0
    triggered: bool = False
    last_epoch: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("patience must be a positive integer")

    def update(self, val_loss: float, epoch: int) -> str:
        """Record one epoch; return ``"stop"`` once patience is exhausted."""
        if self.triggered:
            raise StateError("monitor already triggered")
        self.last_epoch = epoch
        if val_loss < self.best_val:
            self.best_val = float(val_loss)
            self.best_epoch = epoch
            self.bad_epochs = 0
            return CONTINUE
        self.bad_epochs += 1
        if self.bad_epochs == self.patience:
            self.triggered = True
            return STOP
        return CONTINUE

    @property
    def improved(self):
        return self.best_epoch == self.last_epoch


def monitor_update(monitor: Monitor, val_loss: float, epoch: int) -> str:
    return monitor.update(val_loss, epoch)


def epoch_batches(n_samples, batch_size, seed, epoch, label="shuffle"):
    """Seed-derived shuffled index batches for one epoch (the last batch may be short)."""
    if n_samples < 1:
        raise ConfigError("cannot iterate an empty training set")
    perm = make_rng(seed, label, epoch).permutation(n_samples)
    return [perm[i:i + batch_size] for i in range(0, n_samples, batch_size)]
