"""A small reverse-mode autodiff kernel over numpy float64 arrays.

Operations record themselves on an explicit Tape; ``Tape.backward`` walks the
record in reverse.  On top of that sit three layer kinds (dense, graph
convolution, gated recurrent cell), Adam, finite-difference checking and a
checkpoint format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_VERSION = 1


class Var:
    __slots__ = ("value", "grad", "tape")
    # let numpy arrays on the left defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, tape: "Tape"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(self.tape.const(other) if not isinstance(other, Var) else other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


class Tape:
    """Records operations in execution order."""

    def __init__(self):
        self._ops: list[tuple[Var, tuple, Callable]] = []

    def var(self, value) -> Var:
        return Var(value, self)

    const = var

    def record(self, out: Var, parents: tuple, backward: Callable) -> Var:
        self._ops.append((out, parents, backward))
        return out

    def backward(self, out: Var, grad=None) -> None:
        grad = np.ones_like(out.value) if grad is None else np.asarray(grad, dtype=np.float64)
        if grad.shape != out.value.shape:
            raise ValueError(f"output gradient shape {grad.shape} != output shape {out.value.shape}")
        out.grad = grad
        for node, parents, fn in reversed(self._ops):
            if node.grad is None:
                continue
            grads = fn(node.grad)
            for p, g in zip(parents, grads):
                if g is None:
                    continue
                p.grad = g if p.grad is None else p.grad + g


def _lift(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.const(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a: Var, b) -> Var:
    b = _lift(a.tape, b)
    out = Var(a.value + b.value, a.tape)
    return a.tape.record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Var) -> Var:
    return a.tape.record(Var(-a.value, a.tape), (a,), lambda g: (-g,))


def mul(a: Var, b) -> Var:
    b = _lift(a.tape, b)
    out = Var(a.value * b.value, a.tape)
    return a.tape.record(out, (a, b), lambda g: (_unbroadcast(g * b.value, a.shape),
                                                 _unbroadcast(g * a.value, b.shape)))


def div(a: Var, b) -> Var:
    b = _lift(a.tape, b)
    out = Var(a.value / b.value, a.tape)
    return a.tape.record(out, (a, b), lambda g: (_unbroadcast(g / b.value, a.shape),
                                                 _unbroadcast(-g * a.value / b.value ** 2, b.shape)))


def matmul(a, b) -> Var:
    """``a @ b``; a plain (possibly sparse) array operand is treated as a constant."""
    if not isinstance(a, Var):
        out = Var(a @ b.value, b.tape)
        return b.tape.record(out, (b,), lambda g: (a.T @ g,))
    if not isinstance(b, Var):
        out = Var(a.value @ b, a.tape)
        return a.tape.record(out, (a,), lambda g: (g @ b.T,))
    out = Var(a.value @ b.value, a.tape)
    return a.tape.record(out, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    return a.tape.record(Var(y, a.tape), (a,), lambda g: (g * (1 - y * y),))


def sigmoid(a: Var) -> Var:
    y = 0.5 * (1 + np.tanh(0.5 * a.value))
    return a.tape.record(Var(y, a.tape), (a,), lambda g: (g * y * (1 - y),))


def relu(a: Var) -> Var:
    m = a.value > 0
    return a.tape.record(Var(a.value * m, a.tape), (a,), lambda g: (g * m,))


def exp(a: Var) -> Var:
    y = np.exp(a.value)
    return a.tape.record(Var(y, a.tape), (a,), lambda g: (g * y,))


def identity(a: Var) -> Var:
    return a


ACTIVATIONS = {"linear": identity, "tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def concat(parts: Sequence[Var], axis: int = -1) -> Var:
    tape = parts[0].tape
    vals = [p.value for p in parts]
    out = Var(np.concatenate(vals, axis=axis), tape)
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tape.record(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=axis)))


def total(a: Var) -> Var:
    return a.tape.record(Var(a.value.sum(), a.tape), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Var) -> Var:
    n = a.value.size
    return a.tape.record(Var(a.value.mean(), a.tape), (a,), lambda g: (np.full(a.shape, g / n),))


def take(a: Var, idx) -> Var:
    def back(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        return (full,)
    return a.tape.record(Var(a.value[idx], a.tape), (a,), back)


def reshape(a: Var, shape) -> Var:
    return a.tape.record(Var(a.value.reshape(shape), a.tape), (a,), lambda g: (g.reshape(a.shape),))


# ---------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class Layer:
    kind: str                # "dense" | "graphconv" | "recurrent"
    n_in: int
    n_out: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in ("dense", "graphconv", "recurrent"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def dense(n_in, n_out, activation="tanh") -> Layer:
    return Layer("dense", n_in, n_out, activation)


def graphconv(n_in, n_out, activation="tanh") -> Layer:
    return Layer("graphconv", n_in, n_out, activation)


def recurrent(n_in, hidden) -> Layer:
    return Layer("recurrent", n_in, hidden, "tanh")


@dataclass(frozen=True)
class NetSpec:
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.n_out != b.n_in:
                raise ValueError(f"layer {i + 1} expects {b.n_in} inputs, layer {i} gives {a.n_out}")
        for i, l in enumerate(self.layers[1:], 1):
            if l.kind == "recurrent":
                raise ValueError(f"layer {i}: a recurrent layer may only come first")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def param_shapes(self, prefix: str = "") -> dict[str, tuple]:
        shapes = {}
        for i, l in enumerate(self.layers):
            p = f"{prefix}{i}."
            if l.kind == "recurrent":
                for gate in "zrn":
                    shapes[p + "W" + gate] = (l.n_in, l.n_out)
                    shapes[p + "U" + gate] = (l.n_out, l.n_out)
                    shapes[p + "b" + gate] = (l.n_out,)
            else:
                shapes[p + "W"] = (l.n_in, l.n_out)
                shapes[p + "b"] = (l.n_out,)
        return shapes


def init_params(spec: NetSpec, rng: np.random.Generator, prefix: str = "") -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for name, shape in spec.param_shapes(prefix).items():
        if len(shape) == 2:
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-lim, lim, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


def gru_cell(x: Var, h: Var, p: dict, pre: str) -> Var:
    z = sigmoid(x @ p[pre + "Wz"] + h @ p[pre + "Uz"] + p[pre + "bz"])
    r = sigmoid(x @ p[pre + "Wr"] + h @ p[pre + "Ur"] + p[pre + "br"])
    n = tanh(x @ p[pre + "Wn"] + (r * h) @ p[pre + "Un"] + p[pre + "bn"])
    return (1.0 - z) * n + z * h


def apply(spec: NetSpec, pv: dict[str, Var], x, adj=None, prefix: str = "") -> Var:
    """Run ``spec`` on the tape of the parameter Vars ``pv``.

    A recurrent first layer takes ``x`` as a sequence (list) of inputs and
    emits the final hidden state.
    """
    tape = next(iter(pv.values())).tape
    for i, l in enumerate(spec.layers):
        pre = f"{prefix}{i}."
        if l.kind == "recurrent":
            seq = [_lift(tape, s) for s in x]
            if not seq:
                raise ValueError(f"layer {i}: empty input sequence")
            h = tape.const(np.zeros(seq[0].shape[:-1] + (l.n_out,)))
            for step in seq:
                if step.shape[-1] != l.n_in:
                    raise ValueError(f"layer {i} ({l.kind}): expected {l.n_in} features, got {step.shape[-1]}")
                h = gru_cell(step, h, pv, pre)
            x = h
            continue
        x = _lift(tape, x)
        if x.shape[-1] != l.n_in:
            raise ValueError(f"layer {i} ({l.kind}): expected {l.n_in} features, got {x.shape[-1]}")
        if l.kind == "graphconv":
            if adj is None:
                raise ValueError(f"layer {i} (graphconv): adjacency required")
            x = matmul(adj, x)
        x = ACTIVATIONS[l.activation](x @ pv[pre + "W"] + pv[pre + "b"])
    return x


def forward(spec: NetSpec, params: dict[str, np.ndarray], x, adj=None, prefix: str = ""):
    """Returns ``(output Var, tape, parameter Vars)``."""
    tape = Tape()
    pv = {k: tape.var(v) for k, v in params.items()}
    out = apply(spec, pv, x, adj, prefix)
    return out, tape, pv


def backward(tape: Tape, out: Var, grad_out, pv: dict[str, Var]) -> dict[str, np.ndarray]:
    tape.backward(out, grad_out)
    return {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in pv.items()}


def normalized_adjacency(weights: np.ndarray) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` for a symmetric nonnegative weight matrix."""
    a = np.asarray(weights, float) + np.eye(len(weights))
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_update(params: dict, grads: dict, state: AdamState, lr: float = 1e-3,
                betas: tuple = (0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place Adam step with bias correction."""
    b1, b2 = betas
    state.t += 1
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for k, g in grads.items():
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if lr:
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_grads(grads: dict, max_norm: float) -> dict:
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def soft_update(target: dict, source: dict, rate: float) -> None:
    for k, v in source.items():
        target[k] *= 1 - rate
        target[k] += rate * v


# ---------------------------------------------------------------------------
# verification


def relative_error(a, b, atol: float = 1e-6) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), atol)


def numeric_grad(fn: Callable[[], float], arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        fp = fn()
        arr[i] = old - eps
        fm = fn()
        arr[i] = old
        out[i] = (fp - fm) / (2 * eps)
    return out


def grad_check(spec: NetSpec, params: dict, x, adj=None, eps: float = 1e-5,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central differences.

    The scalar probed is a fixed random projection of the network output.
    """
    rng = rng or np.random.default_rng(0)
    out, tape, pv = forward(spec, params, x, adj)
    proj = rng.normal(size=out.shape)
    grads = backward(tape, out, proj, pv)

    def loss():
        o, _, _ = forward(spec, params, x, adj)
        return float(np.sum(o.value * proj))

    worst = 0.0
    for k in params:
        num = numeric_grad(loss, params[k], eps)
        worst = max(worst, float(np.max(relative_error(grads[k], num))))
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict, layout: dict | None = None) -> None:
    """``<path>.npz`` blob plus ``<path>.json`` sidecar with shapes and version."""
    path = Path(path)
    np.savez(path.with_suffix(".npz"), **params)
    meta = {"version": CHECKPOINT_VERSION,
            "shapes": {k: list(v.shape) for k, v in sorted(params.items())},
            "layout": layout or {}}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_checkpoint(path, expect_shapes: dict | None = None) -> dict:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    with np.load(path.with_suffix(".npz")) as blob:
        params = {k: blob[k].astype(np.float64) for k in blob.files}
    if set(params) != set(meta["shapes"]):
        raise ValueError("checkpoint blob and sidecar disagree on parameter names")
    for k, shape in meta["shapes"].items():
        if list(params[k].shape) != shape:
            raise ValueError(f"{k}: blob shape {params[k].shape} != sidecar {shape}")
    if expect_shapes is not None:
        for k, shape in expect_shapes.items():
            if k not in params or tuple(params[k].shape) != tuple(shape):
                raise ValueError(f"{k}: checkpoint does not match the expected layout")
    return params
