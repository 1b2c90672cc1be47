"""Series ingestion, z-score scaling, chronological splits, windowing, synthetic
data and the binary tensor file format."""
from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, FormatError, IngestionError
from .numerics import DTYPE, make_rng

TIME_COLUMNS = ("date", "timestamp")
DEFAULT_RATIOS = (0.7, 0.1, 0.2)
ETT_RATIOS = (0.6, 0.2, 0.2)
SPLITS = ("train", "val", "test")


@dataclass
class RawSeries:
    variable_names: list[str]
    values: np.ndarray  # (rows, N), float64
    timestamps: list[str] | None = None
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.variable_names):
            raise IngestionError(
                f"values shape {self.values.shape} does not match {len(self.variable_names)} variables"
            )
        if not np.all(np.isfinite(self.values)):
            r, c = np.argwhere(~np.isfinite(self.values))[0]
            raise IngestionError(f"non-finite value at row {r}, column {self.variable_names[c]!r}")
        if self.timestamps is not None and len(self.timestamps) != len(self.values):
            raise IngestionError("timestamp count does not match row count")

    @property
    def n_vars(self):
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]


def load_csv(path, name=None) -> RawSeries:
    """Read a header-first CSV; a leading ``date``/``timestamp`` column becomes the time index."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        has_time = bool(header) and header[0].lower() in TIME_COLUMNS
        names = header[1:] if has_time else header
        if not names:
            raise IngestionError(f"{path}: no numeric columns")
        rows, stamps = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}"
                )
            cells = row[1:] if has_time else row
            vals = []
            for col, cell in zip(names, cells):
                try:
                    x = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: line {lineno}, column {col!r}: non-numeric cell {cell!r}"
                    ) from None
                if not math.isfinite(x):
                    raise IngestionError(
                        f"{path}: line {lineno}, column {col!r}: non-finite cell {cell!r}"
                    )
                vals.append(x)
            rows.append(vals)
            if has_time:
                stamps.append(row[0].strip())
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    if has_time and any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise IngestionError(f"{path}: timestamps are not strictly increasing")
    return RawSeries(names, np.array(rows), stamps if has_time else None,
                     name=name or path.stem)


def save_csv(series: RawSeries, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if series.timestamps is not None:
            w.writerow(["date", *series.variable_names])
            for ts, row in zip(series.timestamps, series.values):
                w.writerow([ts, *(repr(float(x)) for x in row)])
        else:
            w.writerow(series.variable_names)
            for row in series.values:
                w.writerow([repr(float(x)) for x in row])


# ---------------------------------------------------------------------------
# scaling and splits
# ---------------------------------------------------------------------------

class ZScoreScaler(TransformerMixin, BaseEstimator):
    """Per-variable z-scoring; constant columns are rejected rather than padded."""

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        if np.any(self.scale_ <= 0):
            bad = np.flatnonzero(self.scale_ <= 0).tolist()
            raise ConfigError(f"constant column(s) {bad} in the training split")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        return (np.asarray(X, dtype=np.float64) - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        return np.asarray(X, dtype=np.float64) * self.scale_ + self.mean_


def default_ratios(dataset_name: str):
    return ETT_RATIOS if dataset_name.upper().startswith("ETT") else DEFAULT_RATIOS


def split_chronological(n_rows, ratios=DEFAULT_RATIOS, T=None, S=None):
    """Contiguous ``[start, stop)`` ranges for train/val/test."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"split ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    n_train = int(math.floor(n_rows * ratios[0] + 1e-9))
    n_val = int(math.floor(n_rows * ratios[1] + 1e-9))
    ranges = {
        "train": (0, n_train),
        "val": (n_train, n_train + n_val),
        "test": (n_train + n_val, n_rows),
    }
    if T is not None and S is not None:
        for split, (a, b) in ranges.items():
            if b - a < T + S:
                raise ConfigError(
                    f"{split} split has {b - a} rows, fewer than T+S={T + S}"
                )
    return ranges


@dataclass
class WindowSample:
    X: np.ndarray  # (N, T)
    Y: np.ndarray  # (N, S)
    origin: int


@dataclass
class Windows:
    """A stack of windows from one split; ``X`` is (n, N, T), ``Y`` is (n, N, S)."""

    X: np.ndarray
    Y: np.ndarray
    origins: np.ndarray

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i):
        return WindowSample(self.X[i], self.Y[i], int(self.origins[i]))


def make_windows(values, T, S, stride=1, start=0, stop=None) -> Windows:
    """Slide over rows ``[start, stop)`` of a (rows, N) matrix."""
    values = np.asarray(values)
    stop = len(values) if stop is None else stop
    length = stop - start
    if T < 1 or S < 1 or stride < 1:
        raise ConfigError("T, S and stride must be positive")
    if length < T + S:
        raise ConfigError(f"segment of {length} rows is shorter than T+S={T + S}")
    count = (length - T - S) // stride + 1
    origins = start + stride * np.arange(count)
    idx_x = origins[:, None] + np.arange(T)[None, :]
    idx_y = origins[:, None] + T + np.arange(S)[None, :]
    X = values[idx_x].transpose(0, 2, 1).astype(DTYPE)
    Y = values[idx_y].transpose(0, 2, 1).astype(DTYPE)
    return Windows(np.ascontiguousarray(X), np.ascontiguousarray(Y), origins)


@dataclass
class WindowedDataset:
    """Scaled series plus per-split windows; everything derived from the train range."""

    series: RawSeries
    T: int
    S: int
    ratios: tuple
    ranges: dict
    scaler: ZScoreScaler
    windows: dict = field(default_factory=dict)

    @property
    def n_vars(self):
        return self.series.n_vars


def prepare_dataset(series: RawSeries, T, S, ratios=None, stride=1) -> WindowedDataset:
    ratios = tuple(ratios) if ratios is not None else default_ratios(series.name)
    ranges = split_chronological(len(series), ratios, T, S)
    a, b = ranges["train"]
    scaler = ZScoreScaler().fit(series.values[a:b])
    scaled = scaler.transform(series.values)
    windows = {
        split: make_windows(scaled, T, S, stride, *ranges[split]) for split in SPLITS
    }
    return WindowedDataset(series, T, S, ratios, ranges, scaler, windows)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SynthSpec:
    """Sinusoid + trend + shared AR(1) factor + Gaussian noise per variable."""

    periods: list
    noise_std: list
    slopes: list | None = None
    rho: float = 0.0
    length: int = 4000
    seed: int = 0
    amplitude: float = 1.0

    def __post_init__(self):
        n = len(self.periods)
        if self.slopes is None:
            self.slopes = [0.0] * n
        if len(self.noise_std) != n or len(self.slopes) != n:
            raise ConfigError("periods, noise_std and slopes must have equal length")
        if any(p < 2 for p in self.periods):
            raise ConfigError("every period must be >= 2")
        if any(s < 0 for s in self.noise_std):
            raise ConfigError("noise_std must be non-negative")
        if not 0 <= self.rho < 1:
            raise ConfigError("rho must lie in [0, 1)")
        if self.length < 1:
            raise ConfigError("length must be positive")

    @property
    def n_vars(self):
        return len(self.periods)


REFERENCE_SYNTH = dict(
    periods=[24, 32, 48, 64, 96, 128],
    noise_std=[0.05, 0.1, 0.2, 0.4, 0.7, 1.0],
    rho=0.2,
    length=4000,
)


def _shared_factor(length, rng, phi=0.95):
    # AR(1) with unit stationary variance
    innov = rng.standard_normal(length) * math.sqrt(1.0 - phi * phi)
    start = rng.standard_normal()
    out, _ = lfilter([1.0], [1.0, -phi], innov, zi=[phi * start])
    return out


def generate_synthetic(spec: SynthSpec, name="synthetic") -> RawSeries:
    t = np.arange(spec.length, dtype=np.float64)
    shared = _shared_factor(spec.length, make_rng(spec.seed, "synth", "shared"))
    cols = []
    for i, (period, sd, slope) in enumerate(zip(spec.periods, spec.noise_std, spec.slopes)):
        noise = make_rng(spec.seed, "synth", "noise", i).standard_normal(spec.length) * sd
        col = spec.amplitude * np.sin(2 * np.pi * t / period) + slope * t + noise
        if spec.rho:
            col = col + spec.rho * shared
        cols.append(col)
    names = [f"var{i}" for i in range(spec.n_vars)]
    return RawSeries(names, np.stack(cols, axis=1), None, name=name)


# ---------------------------------------------------------------------------
# tensor files
# ---------------------------------------------------------------------------

MAGIC = b"SOPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")  # magic, version, ndim, reserved


def write_tensor(path, tensor):
    """Write a float32 array as ``SOPT`` v1: 16-byte header, u32 dims, little-endian payload."""
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    if not np.all(np.isfinite(arr)):
        raise FormatError("refusing to write non-finite tensor")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, arr.ndim, 0))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())
    os.replace(tmp, path)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, ndim, _ = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    off = _HEADER.size
    if len(blob) < off + 4 * ndim:
        raise FormatError(f"{path}: truncated dimensions")
    shape = struct.unpack_from(f"<{ndim}I", blob, off)
    off += 4 * ndim
    n = int(np.prod(shape, dtype=np.int64))
    if len(blob) != off + 4 * n:
        raise FormatError(f"{path}: payload has {len(blob) - off} bytes, expected {4 * n}")
    arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
    return arr.astype(DTYPE)
