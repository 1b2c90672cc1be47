"""Small float32 training core: dense layers, GELU, LayerNorm, MSE, a reverse-mode
tape, Adam and seeded initialization.

Everything here works on plain ``numpy`` arrays. Parameters and activations are
float32; loss values are accumulated in float64.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .exceptions import NumericError, ShapeError, StateError

DTYPE = np.float32
LN_EPS = 1e-5

_SQRT1_2 = np.float32(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = np.float32(1.0 / np.sqrt(2.0 * np.pi))


def check_finite(arr, what="value"):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what}")
    return arr


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

def derive_seed(seed: int, *labels) -> int:
    """Hash ``seed`` and a sequence of labels into a 64-bit sub-seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int, *labels) -> np.random.Generator:
    if labels:
        seed = derive_seed(seed, *labels)
    return np.random.Generator(np.random.PCG64(seed))


# ---------------------------------------------------------------------------
# pure functions
# ---------------------------------------------------------------------------

def gelu(x):
    """Exact GELU, ``x * Phi(x)``."""
    x = np.asarray(x, dtype=DTYPE)
    check_finite(x, "GELU input")
    return x * (DTYPE(0.5) * (DTYPE(1.0) + erf(x * _SQRT1_2)))


def layer_norm(v, eps=LN_EPS):
    """Normalize over the last axis with population variance; no affine terms."""
    v = np.asarray(v, dtype=DTYPE)
    check_finite(v, "LayerNorm input")
    if v.shape[-1] < 1:
        raise ShapeError("layer_norm needs at least one element")
    # float64 accumulation makes the mean of a constant float32 vector exact
    mu = v.mean(axis=-1, keepdims=True, dtype=np.float64).astype(DTYPE)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + DTYPE(eps))


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    return float(np.mean(diff * diff))


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------

@dataclass
class DenseParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"inconsistent dense params: weight {self.weight.shape}, bias {self.bias.shape}"
            )

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    def arrays(self):
        return [self.weight, self.bias]

    def copy(self):
        return DenseParams(self.weight.copy(), self.bias.copy())


def init_params(n_in: int, n_out: int, rng: np.random.Generator) -> DenseParams:
    """Fan-in scaled uniform weights ``U(-1/sqrt(n_in), 1/sqrt(n_in))``, zero bias."""
    if n_in < 1 or n_out < 1:
        raise ShapeError(f"dense layer needs positive sizes, got {n_in}->{n_out}")
    bound = 1.0 / np.sqrt(n_in)
    weight = rng.uniform(-bound, bound, size=(n_out, n_in)).astype(DTYPE)
    return DenseParams(weight, np.zeros(n_out, dtype=DTYPE))


def mlp_forward(layers: Sequence[DenseParams], x, activations: Sequence[str | None] | None = None):
    """Evaluate a dense chain on ``x`` (vector or batch of row vectors).

    ``activations[k]`` is applied after layer ``k``; ``None`` means linear. The
    default plan puts GELU after every layer but the last.
    """
    if activations is None:
        activations = ["gelu"] * (len(layers) - 1) + [None]
    tape = Tape()
    out = tape.constant(x)
    for layer, act in zip(layers, activations):
        out = tape.linear(out, tape.constant(layer.weight), tape.constant(layer.bias))
        if act == "gelu":
            out = tape.gelu(out)
        elif act is not None:
            raise ValueError(f"unknown activation {act!r}")
    return out.value


# ---------------------------------------------------------------------------
# reverse-mode tape
# ---------------------------------------------------------------------------

class Node:
    __slots__ = ("value", "grad", "needs_grad")

    def __init__(self, value, needs_grad=False):
        self.value = value
        self.grad = None
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Records dense/activation/norm/loss ops and replays them backwards.

    Only the operations a plug or built-in socket needs are provided. Leaves
    created with :meth:`param` receive gradients; leaves from :meth:`constant`
    do not, and ops that touch no parameter are not recorded at all.
    """

    def __init__(self, dtype=DTYPE):
        self.dtype = dtype
        self._ops: list[Callable[[], None]] = []
        self._params: list[Node] = []
        self._done = False

    def param(self, array) -> Node:
        if array.dtype != self.dtype:
            raise ShapeError(f"parameter dtype {array.dtype} does not match tape dtype {self.dtype}")
        node = Node(array, needs_grad=True)
        self._params.append(node)
        return node

    def constant(self, array) -> Node:
        return Node(np.asarray(array, dtype=self.dtype))

    def _record(self, value, parents, back) -> Node:
        out = Node(value, any(p.needs_grad for p in parents))
        if out.needs_grad:
            self._ops.append(lambda: out.grad is not None and back(out.grad))
        return out

    @staticmethod
    def _acc(node, g):
        if not node.needs_grad:
            return
        node.grad = g if node.grad is None else node.grad + g

    def linear(self, x: Node, w: Node, b: Node | None = None) -> Node:
        if x.shape[-1] != w.shape[1]:
            raise ShapeError(f"linear: input width {x.shape[-1]} != weight in-dim {w.shape[1]}")
        y = x.value @ w.value.T
        if b is not None:
            if b.shape != (w.shape[0],):
                raise ShapeError(f"linear: bias shape {b.shape} != ({w.shape[0]},)")
            y = y + b.value

        def back(g):
            if x.needs_grad:
                self._acc(x, g @ w.value)
            g2 = g.reshape(-1, g.shape[-1])
            if w.needs_grad:
                self._acc(w, g2.T @ x.value.reshape(-1, x.shape[-1]))
            if b is not None and b.needs_grad:
                self._acc(b, g2.sum(axis=0))

        return self._record(y, [x, w] + ([b] if b is not None else []), back)

    def gelu(self, x: Node) -> Node:
        xv = x.value
        check_finite(xv, "GELU input")
        cdf = self.dtype(0.5) * (self.dtype(1.0) + erf(xv * self.dtype(_SQRT1_2)))

        def back(g):
            pdf = self.dtype(_INV_SQRT_2PI) * np.exp(self.dtype(-0.5) * xv * xv)
            self._acc(x, g * (cdf + xv * pdf))

        return self._record(xv * cdf, [x], back)

    def layer_norm(self, x: Node, eps=LN_EPS) -> Node:
        xv = x.value
        mu = xv.mean(axis=-1, keepdims=True, dtype=np.float64).astype(self.dtype)
        xc = xv - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = self.dtype(1.0) / np.sqrt(var + self.dtype(eps))
        y = xc * inv

        def back(g):
            gm = g.mean(axis=-1, keepdims=True)
            gym = (g * y).mean(axis=-1, keepdims=True)
            self._acc(x, inv * (g - gm - y * gym))

        return self._record(y, [x], back)

    def mul(self, a: Node, b: Node) -> Node:
        def back(g):
            self._acc(a, _unbroadcast(g * b.value, a.shape))
            self._acc(b, _unbroadcast(g * a.value, b.shape))

        return self._record(a.value * b.value, [a, b], back)

    def add(self, a: Node, b: Node) -> Node:
        def back(g):
            self._acc(a, _unbroadcast(g, a.shape))
            self._acc(b, _unbroadcast(g, b.shape))

        return self._record(a.value + b.value, [a, b], back)

    def reshape(self, x: Node, shape) -> Node:
        return self._record(x.value.reshape(shape), [x],
                            lambda g: self._acc(x, g.reshape(x.shape)))

    def sum(self, x: Node) -> Node:
        return self._record(np.asarray(x.value.sum(dtype=np.float64)), [x],
                            lambda g: self._acc(x, np.full(x.shape, g, dtype=self.dtype)))

    def mse(self, pred: Node, target, weight: float = 1.0) -> Node:
        """Mean squared error as a float64 scalar; ``weight`` scales only the gradient."""
        tv = target.value if isinstance(target, Node) else np.asarray(target, dtype=self.dtype)
        if pred.shape != tv.shape:
            raise ShapeError(f"mse shape mismatch {pred.shape} vs {tv.shape}")
        diff = pred.value - tv
        d64 = pred.value.astype(np.float64) - tv.astype(np.float64)
        count = diff.size

        def back(g):
            self._acc(pred, diff * self.dtype(2.0 * float(g) * weight / count))

        return self._record(np.asarray(np.mean(d64 * d64)), [pred], back)

    def backward(self, loss: Node) -> list[np.ndarray]:
        """Propagate from a scalar ``loss``; return gradients aligned with :meth:`param` order.

        Parameters the loss does not depend on get exact zeros.
        """
        if self._done:
            raise StateError("tape already consumed by backward()")
        if not self._ops:
            raise StateError("backward() called before any forward op was recorded")
        if np.ndim(loss.value) != 0:
            raise ShapeError("backward() needs a scalar loss")
        loss.grad = np.asarray(1.0)
        for back in reversed(self._ops):
            back()
        self._done = True
        grads = []
        for p in self._params:
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            grads.append(np.asarray(g, dtype=self.dtype))
        return grads


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class Adam:
    """Adam with bias correction over a fixed list of float32 arrays, updated in place."""

    params: list[np.ndarray]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
            self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]):
        if len(grads) != len(self.params):
            raise ShapeError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for g in grads:
            check_finite(g, "gradient")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= DTYPE(b1)
            m += DTYPE(1.0 - b1) * g
            v *= DTYPE(b2)
            v += DTYPE(1.0 - b2) * (g * g)
            m_hat = m / DTYPE(c1)
            v_hat = v / DTYPE(c2)
            p -= DTYPE(self.lr) * m_hat / (np.sqrt(v_hat) + DTYPE(self.eps))


def adam_step(state: Adam, grads):
    """Functional spelling of :meth:`Adam.step`; returns the (mutated) parameter list."""
    state.step(grads)
    return state.params


def param_digest(arrays: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(np.asarray(a.shape, dtype=np.int64).tobytes())
        h.update(a.tobytes())
    return h.hexdigest()
