"""Target partitioning and the plug calibrator: ``MLP(y_hat) * LayerNorm(y_hat)`` per group."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import read_tensor, write_tensor
from .exceptions import ConfigError, FormatError, ShapeError, StateError
from .manifest import read_manifest, write_manifest
from .numerics import DTYPE, LN_EPS, DenseParams, Tape, init_params, make_rng, param_digest

AXES = ("variable", "step")


@dataclass(frozen=True)
class PlugGroupSpec:
    """Ordered, disjoint, contiguous groups over the variable or horizon axis."""

    axis: str
    n_vars: int
    horizon: int
    groups: tuple  # tuple of (start, stop) ranges

    @property
    def plug_count(self):
        return len(self.groups)

    @property
    def axis_len(self):
        return self.n_vars if self.axis == "variable" else self.horizon

    @property
    def other_len(self):
        return self.horizon if self.axis == "variable" else self.n_vars

    def group_indices(self, i):
        return list(range(*self.groups[i]))

    def group_size(self, i):
        a, b = self.groups[i]
        return b - a

    def group_io_size(self, i):
        return self.group_size(i) * self.other_len

    def gather(self, Y, i):
        """Flatten group ``i`` of a (B, N, S) array to (B, io)."""
        a, b = self.groups[i]
        part = Y[:, a:b, :] if self.axis == "variable" else Y[:, :, a:b]
        return np.ascontiguousarray(part).reshape(Y.shape[0], -1)

    def to_dict(self):
        return {"axis": self.axis, "N": self.n_vars, "S": self.horizon,
                "groups": [list(g) for g in self.groups]}


def partition_targets(N, S, axis="variable", M=None) -> PlugGroupSpec:
    """Split the variable (or step) axis into ``M`` ordered groups.

    Sizes differ by at most one; the first ``len % M`` groups take the extra index.
    ``M=None`` means one group per target.
    """
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")
    length = N if axis == "variable" else S
    if M is None or M == "target-wise":
        M = length
    if not isinstance(M, (int, np.integer)) or not 1 <= M <= length:
        raise ConfigError(
            f"plug_count must satisfy 1 <= M <= {length} ({'N' if axis == 'variable' else 'S'}) "
            f"for axis={axis}, got {M}"
        )
    base, extra = divmod(length, M)
    groups, start = [], 0
    for i in range(M):
        size = base + (1 if i < extra else 0)
        groups.append((start, start + size))
        start += size
    return PlugGroupSpec(axis, N, S, tuple(groups))


def plug_hidden_width(g, d, s, n) -> int:
    """Hidden width giving a grouped plug the weight budget of ``n`` reference plugs.

    Solves ``2*g*h + h**2 = n*(2*s*d + d**2)`` for the positive root (biases ignored).
    """
    if min(g, d, s, n) <= 0:
        raise ConfigError("plug_hidden_width needs positive arguments")
    budget = n * (2 * s * d + d * d)
    # h = -g + sqrt(g^2 + budget), written to avoid cancellation for large g
    h = budget / (g + math.sqrt(g * g + budget))
    return max(1, int(round(h)))


def plug_weight_count(io, h):
    return 2 * io * h + h * h


@dataclass
class Plug:
    group_id: int
    layers: list  # three DenseParams: io->h, h->h, h->io

    @classmethod
    def init(cls, group_id, io, hidden, rng):
        layers = [init_params(io, hidden, rng), init_params(hidden, hidden, rng),
                  init_params(hidden, io, rng)]
        return cls(group_id, layers)

    @property
    def io_size(self):
        return self.layers[0].n_in

    @property
    def hidden(self):
        return self.layers[0].n_out

    def arrays(self):
        return [a for layer in self.layers for a in layer.arrays()]

    def copy(self):
        return Plug(self.group_id, [layer.copy() for layer in self.layers])

    def digest(self):
        return param_digest(self.arrays())

    def n_weights(self):
        return sum(layer.weight.size for layer in self.layers)

    def build(self, tape: Tape, x, params=None):
        """Record the forward pass of a (B, io) batch on ``tape``; returns the output node."""
        if x.shape[-1] != self.io_size:
            raise ShapeError(f"plug {self.group_id} expects width {self.io_size}, got {x.shape[-1]}")
        if params is None:
            params = [tape.constant(a) for a in self.arrays()]
        gate = tape.layer_norm(x, LN_EPS)
        h = x
        for k in range(3):
            h = tape.linear(h, params[2 * k], params[2 * k + 1])
            if k < 2:
                h = tape.gelu(h)
        return tape.mul(h, gate)

    def forward(self, x):
        x = np.asarray(x, dtype=DTYPE)
        tape = Tape()
        node = tape.constant(x if x.ndim == 2 else x[None, :])
        out = self.build(tape, node).value
        return out if x.ndim == 2 else out[0]


def plug_forward(plug: Plug, y_hat_group):
    """Calibrate one flattened group vector (or a (B, io) batch)."""
    return plug.forward(y_hat_group)


@dataclass
class PlugBank:
    spec: PlugGroupSpec
    plugs: list
    frozen: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.plugs) != self.spec.plug_count:
            raise ConfigError(f"bank has {len(self.plugs)} plugs for {self.spec.plug_count} groups")
        for i, p in enumerate(self.plugs):
            if p.io_size != self.spec.group_io_size(i):
                raise ShapeError(f"plug {i} width {p.io_size} != group io {self.spec.group_io_size(i)}")
        if not self.frozen:
            self.frozen = [False] * len(self.plugs)

    @property
    def plug_count(self):
        return len(self.plugs)

    def digests(self):
        return [p.digest() for p in self.plugs]

    def copy(self):
        return PlugBank(self.spec, [p.copy() for p in self.plugs], list(self.frozen))

    def predict(self, Y_hat, batch=2048):
        """Calibrate a (B, N, S) stack of socket forecasts."""
        Y_hat = np.asarray(Y_hat, dtype=DTYPE)
        if Y_hat.shape[1:] != (self.spec.n_vars, self.spec.horizon):
            raise ShapeError(
                f"bank expects forecasts (n, {self.spec.n_vars}, {self.spec.horizon}), got {Y_hat.shape}"
            )
        outs = []
        for i, plug in enumerate(self.plugs):
            x = self.spec.gather(Y_hat, i)
            outs.append(np.concatenate(
                [plug.forward(x[k:k + batch]) for k in range(0, len(x), batch)], axis=0))
        return assemble_forecast(self.spec, outs)


def build_bank(spec: PlugGroupSpec, d=256, seed=0, parity=True) -> PlugBank:
    """One freshly initialised plug per group.

    With ``parity`` each grouped plug gets the hidden width that matches the
    summed weight budget of the target-wise plugs it replaces.
    """
    plugs = []
    for i in range(spec.plug_count):
        io = spec.group_io_size(i)
        n = spec.group_size(i)
        h = plug_hidden_width(io, d, spec.other_len, n) if parity and n > 1 else d
        plugs.append(Plug.init(i, io, h, make_rng(seed, "plug-init", spec.axis, io, i)))
    return PlugBank(spec, plugs)


def assemble_forecast(spec: PlugGroupSpec, outputs):
    """Scatter per-group (B, io) outputs back into a (B, N, S) forecast."""
    if len(outputs) != spec.plug_count or any(o is None for o in outputs):
        raise StateError(f"expected {spec.plug_count} group outputs, got {len(outputs)}")
    B = np.shape(outputs[0])[0]
    out = np.empty((B, spec.n_vars, spec.horizon), dtype=DTYPE)
    for i, (a, b) in enumerate(spec.groups):
        o = np.asarray(outputs[i])
        if o.shape != (B, spec.group_io_size(i)):
            raise ShapeError(f"group {i} output shape {o.shape} != {(B, spec.group_io_size(i))}")
        if spec.axis == "variable":
            out[:, a:b, :] = o.reshape(B, b - a, spec.horizon)
        else:
            out[:, :, a:b] = o.reshape(B, spec.n_vars, b - a)
    return out


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def save_bank(bank: PlugBank, directory, d=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec = bank.spec
    write_manifest(directory / "bank.manifest", {
        "format": "sop-plug-bank", "version": 1, "axis": spec.axis,
        "N": spec.n_vars, "S": spec.horizon, "plug_count": spec.plug_count,
        "groups": ";".join(f"{a}:{b}" for a, b in spec.groups),
    })
    for i, plug in enumerate(bank.plugs):
        pdir = directory / f"plug_{i:03d}"
        pdir.mkdir(exist_ok=True)
        arrays = plug.arrays()
        for k, arr in enumerate(arrays):
            write_tensor(pdir / f"param_{k}.sopt", arr)
        write_manifest(pdir / "plug.manifest", {
            "group_id": i, "axis": spec.axis,
            "group": ",".join(map(str, spec.group_indices(i))),
            "io": plug.io_size, "h": plug.hidden, "d": d if d is not None else plug.hidden,
            "frozen": int(bank.frozen[i]), "digest": plug.digest(),
        })
    return directory


def load_bank(directory) -> PlugBank:
    directory = Path(directory)
    m = read_manifest(directory / "bank.manifest")
    groups = tuple(tuple(int(v) for v in g.split(":")) for g in m["groups"].split(";"))
    spec = PlugGroupSpec(m["axis"], int(m["N"]), int(m["S"]), groups)
    plugs, frozen = [], []
    for i in range(len(groups)):
        pdir = directory / f"plug_{i:03d}"
        pm = read_manifest(pdir / "plug.manifest")
        arrays = [read_tensor(pdir / f"param_{k}.sopt") for k in range(6)]
        plug = Plug(i, [DenseParams(arrays[2 * k], arrays[2 * k + 1]) for k in range(3)])
        if plug.digest() != pm["digest"]:
            raise FormatError(f"{pdir}: parameter digest mismatch")
        plugs.append(plug)
        frozen.append(bool(int(pm.get("frozen", "0"))))
    return PlugBank(spec, plugs, frozen)
