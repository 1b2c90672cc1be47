"""Frozen forecasters ("sockets"), their prediction caches and on-disk formats.

Built-in sockets follow the scikit-learn estimator protocol: ``fit`` trains on
windows shaped ``(n, N, T) -> (n, N, S)`` and freezes the result; ``predict``
maps ``(n, N, T)`` inputs to ``(n, N, S)`` forecasts.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .data import SPLITS, WindowedDataset, read_tensor, write_tensor
from .exceptions import CacheMissError, ConfigError, FormatError, StateError, TrainingError
from .manifest import read_manifest, write_manifest
from .numerics import DTYPE, Adam, DenseParams, Tape, init_params, make_rng, param_digest
from .training import STOP, Monitor, epoch_batches
from .validation import check_windows

log = logging.getLogger(__name__)

SOCKET_KINDS = ("linear-decomp", "mlp", "external")


def moving_average_matrix(T, kernel_size=25):
    """(T, T) operator computing a centred moving average with edge replication."""
    if kernel_size < 1:
        raise ConfigError("kernel_size must be positive")
    front = (kernel_size - 1) // 2
    back = kernel_size - 1 - front
    A = np.zeros((T, T), dtype=np.float64)
    for t in range(T):
        for k in range(t - front, t + back + 1):
            A[t, min(max(k, 0), T - 1)] += 1.0
    return (A / kernel_size).astype(DTYPE)


class _BuiltinSocket(RegressorMixin, BaseEstimator):
    kind = ""

    def _init_params(self, N, T, S, rng):  # pragma: no cover - abstract
        raise NotImplementedError

    def _forward(self, tape, X, params):  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def frozen(self):
        return getattr(self, "frozen_", False)

    def parameters(self):
        check_is_fitted(self, "params_")
        return self.params_

    def digest(self):
        return param_digest(self.parameters())

    def fit(self, X, y, eval_set=None):
        """Train with Adam + MSE under a single monitor on total validation loss, then freeze."""
        if self.frozen:
            raise StateError("socket is frozen; create a new estimator to retrain")
        X = check_windows(X, "X")
        y = check_windows(y, "y")
        if eval_set is None:
            raise ConfigError("socket training needs an eval_set=(X_val, y_val)")
        Xv, yv = (check_windows(a, n) for a, n in zip(eval_set, ("X_val", "y_val")))
        if len(X) < 1 or len(Xv) < 1:
            raise ConfigError("socket training needs at least one train and one val window")
        n, N, T = X.shape
        S = y.shape[2]
        self.n_vars_, self.input_len_, self.horizon_ = N, T, S
        params = self._init_params(N, T, S, make_rng(self.seed, "socket-init", self.kind))
        opt = Adam(params, lr=self.lr)
        monitor = Monitor(self.patience)
        best = [p.copy() for p in params]
        history = []
        for epoch in range(1, self.max_epochs + 1):
            train_loss, seen = 0.0, 0
            for idx in epoch_batches(n, self.batch_size, self.seed, epoch, "socket-shuffle"):
                tape = Tape()
                nodes = [tape.param(p) for p in params]
                out = self._forward(tape, tape.constant(X[idx]), nodes)
                loss = tape.mse(out, y[idx])
                lv = float(loss.value)
                if not np.isfinite(lv):
                    raise TrainingError(f"{self.kind} socket diverged at epoch {epoch}")
                opt.step(tape.backward(loss))
                train_loss += lv * len(idx)
                seen += len(idx)
            val = self._loss(Xv, yv, params)
            history.append((epoch, train_loss / seen, val))
            decision = monitor.update(val, epoch)
            if monitor.improved:
                best = [p.copy() for p in params]
            log.debug("socket %s epoch %d train %.6f val %.6f", self.kind, epoch, train_loss / seen, val)
            if decision == STOP:
                break
        for p in best:
            p.setflags(write=False)
        self.params_ = best
        self.history_ = history
        self.best_epoch_ = monitor.best_epoch
        self.stop_epoch_ = history[-1][0]
        self.frozen_ = True
        return self

    def _predict_with(self, X, params, batch=1024):
        out = []
        for i in range(0, len(X), batch):
            tape = Tape()
            nodes = [tape.constant(p) for p in params]
            out.append(self._forward(tape, tape.constant(X[i:i + batch]), nodes).value)
        return np.concatenate(out, axis=0) if out else np.zeros((0,), DTYPE)

    def _loss(self, X, y, params):
        pred = self._predict_with(X, params)
        d = pred.astype(np.float64) - y.astype(np.float64)
        return float(np.mean(d * d))

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_windows(X, "X")
        if X.shape[1:] != (self.n_vars_, self.input_len_):
            raise ConfigError(
                f"socket expects inputs (n, {self.n_vars_}, {self.input_len_}), got {X.shape}"
            )
        return self._predict_with(X, self.params_)

    def score(self, X, y, sample_weight=None):
        """Negative MSE, so that larger is better."""
        pred = self.predict(X)
        d = pred.astype(np.float64) - np.asarray(y, dtype=np.float64)
        return -float(np.mean(d * d))


class LinearDecompSocket(_BuiltinSocket):
    """Trend/seasonal split by moving average, then one shared linear map per component.

    The maps act along time and are shared across variables, so the model is
    channel independent.
    """

    kind = "linear-decomp"

    def __init__(self, kernel_size=25, lr=1e-3, patience=10, max_epochs=100, batch_size=32, seed=0):
        self.kernel_size = kernel_size
        self.lr = lr
        self.patience = patience
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.seed = seed

    def _init_params(self, N, T, S, rng):
        self._avg = moving_average_matrix(T, self.kernel_size)
        seasonal = init_params(T, S, rng)
        trend = init_params(T, S, rng)
        return [seasonal.weight, seasonal.bias, trend.weight, trend.bias]

    def _forward(self, tape, X, params):
        if getattr(self, "_avg", None) is None or self._avg.shape[0] != X.shape[-1]:
            self._avg = moving_average_matrix(X.shape[-1], self.kernel_size)
        trend = X.value @ self._avg.T
        seasonal = X.value - trend
        ws, bs, wt, bt = params
        out_s = tape.linear(tape.constant(seasonal), ws, bs)
        out_t = tape.linear(tape.constant(trend), wt, bt)
        return tape.add(out_s, out_t)

    @classmethod
    def from_params(cls, seasonal: DenseParams, trend: DenseParams, n_vars, kernel_size=25):
        """Build a frozen socket around fixed weights (no training)."""
        sock = cls(kernel_size=kernel_size)
        sock.params_ = [seasonal.weight, seasonal.bias, trend.weight, trend.bias]
        for p in sock.params_:
            p.setflags(write=False)
        sock.n_vars_, sock.input_len_, sock.horizon_ = n_vars, seasonal.n_in, seasonal.n_out
        sock.frozen_ = True
        return sock


class MLPSocket(_BuiltinSocket):
    """Cross-variable MLP over the flattened window: N*T -> hidden -> N*S."""

    kind = "mlp"

    def __init__(self, hidden=128, lr=1e-3, patience=10, max_epochs=100, batch_size=32, seed=0):
        self.hidden = hidden
        self.lr = lr
        self.patience = patience
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.seed = seed

    def _init_params(self, N, T, S, rng):
        l1 = init_params(N * T, self.hidden, rng)
        l2 = init_params(self.hidden, N * S, rng)
        return [*l1.arrays(), *l2.arrays()]

    def _forward(self, tape, X, params):
        w1, b1, w2, b2 = params
        B = X.shape[0]
        flat = tape.reshape(X, (B, -1))
        h = tape.gelu(tape.linear(flat, w1, b1))
        return tape.reshape(tape.linear(h, w2, b2), (B, self.n_vars_, -1))


class ExternalSocket(BaseEstimator):
    """Socket backed by prediction files; it never computes, only looks up by sample index."""

    kind = "external"

    def __init__(self, manifest_path=None):
        self.manifest_path = manifest_path

    @property
    def frozen(self):
        return True

    @classmethod
    def from_caches(cls, caches: dict, manifest_path=None):
        sock = cls(manifest_path)
        sock.caches_ = caches
        first = next(iter(caches.values()))
        sock.n_vars_, sock.horizon_ = first.pred.shape[1], first.pred.shape[2]
        sock.fingerprint_ = first.fingerprint
        return sock

    def fit(self, X=None, y=None):
        caches = load_prediction_caches(self.manifest_path)
        other = ExternalSocket.from_caches(caches, self.manifest_path)
        self.__dict__.update({k: v for k, v in other.__dict__.items() if k.endswith("_")})
        return self

    def parameters(self):
        check_is_fitted(self, "caches_")
        return [self.caches_[s].pred for s in sorted(self.caches_)]

    def digest(self):
        return param_digest(self.parameters())

    def predict(self, X=None, *, indices=None, split="test"):
        check_is_fitted(self, "caches_")
        if split not in self.caches_:
            raise CacheMissError(f"no cached predictions for split {split!r}")
        pred = self.caches_[split].pred
        if indices is None:
            if X is not None and len(X) != len(pred):
                raise CacheMissError("external socket needs sample indices for partial lookups")
            return pred.copy()
        indices = np.atleast_1d(np.asarray(indices))
        bad = indices[(indices < 0) | (indices >= len(pred))]
        if bad.size:
            raise CacheMissError(f"sample index {int(bad[0])} not in cached {split} split of {len(pred)}")
        return pred[indices].copy()


def socket_predict(socket, X=None, **kwargs):
    return socket.predict(X, **kwargs)


def make_socket(kind, **hyper):
    if kind == "linear-decomp":
        return LinearDecompSocket(**hyper)
    if kind == "mlp":
        return MLPSocket(**hyper)
    raise ConfigError(f"unknown socket kind {kind!r}; expected one of {SOCKET_KINDS[:2]}")


def train_builtin_socket(kind, dataset: WindowedDataset, **hyper):
    tr, va = dataset.windows["train"], dataset.windows["val"]
    return make_socket(kind, **hyper).fit(tr.X, tr.Y, eval_set=(va.X, va.Y))


# ---------------------------------------------------------------------------
# prediction caches
# ---------------------------------------------------------------------------

@dataclass
class PredictionCache:
    split: str
    pred: np.ndarray  # (n, N, S)
    true: np.ndarray  # (n, N, S)
    fingerprint: str = ""

    def __post_init__(self):
        if self.pred.shape != self.true.shape:
            raise FormatError(
                f"{self.split}: prediction shape {self.pred.shape} != target shape {self.true.shape}"
            )
        if self.pred.ndim != 3:
            raise FormatError(f"{self.split}: caches must be (samples, N, S), got {self.pred.shape}")

    def __len__(self):
        return self.pred.shape[0]

    @property
    def n_vars(self):
        return self.pred.shape[1]

    @property
    def horizon(self):
        return self.pred.shape[2]


def dataset_fingerprint(dataset: WindowedDataset) -> str:
    """Content hash over normalization stats, window geometry and split indices."""
    h = hashlib.sha256()
    h.update(np.asarray(dataset.scaler.mean_, dtype="<f8").tobytes())
    h.update(np.asarray(dataset.scaler.scale_, dtype="<f8").tobytes())
    h.update(np.asarray([dataset.T, dataset.S, len(dataset.series), dataset.n_vars], dtype="<i8").tobytes())
    for split in SPLITS:
        h.update(split.encode())
        h.update(np.asarray(dataset.ranges[split], dtype="<i8").tobytes())
        h.update(np.asarray(dataset.windows[split].origins, dtype="<i8").tobytes())
    return h.hexdigest()[:32]


def cache_predictions(socket, windows, split, fingerprint="") -> PredictionCache:
    if not socket.frozen:
        raise StateError("predictions can only be cached from a frozen socket")
    pred = socket.predict(windows.X)
    return PredictionCache(split, pred.astype(DTYPE), windows.Y.astype(DTYPE), fingerprint)


def cache_dataset(socket, dataset: WindowedDataset, splits=SPLITS) -> dict:
    fp = dataset_fingerprint(dataset)
    return {s: cache_predictions(socket, dataset.windows[s], s, fp) for s in splits}


def save_prediction_caches(caches: dict, directory, filename="predictions.manifest"):
    """Write ``<split>_pred.sopt`` / ``<split>_true.sopt`` and a key-value manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = next(iter(caches.values()))
    entries = {
        "format": "sop-predictions",
        "version": 1,
        "N": first.n_vars,
        "S": first.horizon,
        "fingerprint": first.fingerprint,
        "splits": ",".join(caches),
    }
    for split, cache in caches.items():
        write_tensor(directory / f"{split}_pred.sopt", cache.pred)
        write_tensor(directory / f"{split}_true.sopt", cache.true)
        entries[f"{split}.pred"] = f"{split}_pred.sopt"
        entries[f"{split}.true"] = f"{split}_true.sopt"
        entries[f"{split}.samples"] = len(cache)
    path = directory / filename
    write_manifest(path, entries)
    return path


def load_prediction_caches(manifest_path) -> dict:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "predictions.manifest"
    m = read_manifest(manifest_path)
    base = manifest_path.parent
    splits = [s for s in m.get("splits", "").split(",") if s]
    if not splits:
        raise FormatError(f"{manifest_path}: manifest lists no splits")
    caches = {}
    for split in splits:
        try:
            pred = read_tensor(base / m[f"{split}.pred"])
            true = read_tensor(base / m[f"{split}.true"])
        except KeyError as exc:
            raise FormatError(f"{manifest_path}: missing entry {exc}") from None
        if pred.shape != true.shape:
            raise FormatError(
                f"{manifest_path}: {split} prediction shape {pred.shape} != target shape {true.shape}"
            )
        caches[split] = PredictionCache(split, pred, true, m.get("fingerprint", ""))
    shapes = {c.pred.shape[1:] for c in caches.values()}
    if len(shapes) != 1:
        raise FormatError(f"{manifest_path}: splits disagree on (N, S): {sorted(shapes)}")
    N, S = shapes.pop()
    for key, val in (("N", N), ("S", S)):
        if key in m and int(m[key]) != val:
            raise FormatError(f"{manifest_path}: manifest {key}={m[key]} but tensors have {val}")
    return caches


def load_external_predictions(manifest_path):
    """Return an :class:`ExternalSocket` and its per-split caches."""
    caches = load_prediction_caches(manifest_path)
    return ExternalSocket.from_caches(caches, str(manifest_path)), caches


# ---------------------------------------------------------------------------
# socket snapshots
# ---------------------------------------------------------------------------

def save_socket(socket, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = socket.parameters()
    entries = {
        "format": "sop-socket",
        "version": 1,
        "kind": socket.kind,
        "N": socket.n_vars_,
        "T": socket.input_len_,
        "S": socket.horizon_,
        "n_params": len(params),
        "digest": socket.digest(),
    }
    for key, val in socket.get_params().items():
        entries[f"hyper.{key}"] = val
    for i, p in enumerate(params):
        write_tensor(directory / f"param_{i}.sopt", p)
    write_manifest(directory / "socket.manifest", entries)
    return directory


def load_socket(directory):
    directory = Path(directory)
    m = read_manifest(directory / "socket.manifest")
    hyper = {k[len("hyper."):]: _coerce(v) for k, v in m.items() if k.startswith("hyper.")}
    sock = make_socket(m["kind"], **hyper)
    params = [read_tensor(directory / f"param_{i}.sopt") for i in range(int(m["n_params"]))]
    for p in params:
        p.setflags(write=False)
    sock.params_ = params
    sock.n_vars_, sock.input_len_, sock.horizon_ = int(m["N"]), int(m["T"]), int(m["S"])
    sock.frozen_ = True
    if sock.digest() != m["digest"]:
        raise FormatError(f"{directory}: parameter digest does not match manifest")
    return sock


def _coerce(text):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text
