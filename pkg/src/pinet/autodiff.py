"""Tape-based reverse-mode differentiation over a fixed primitive set.

A :class:`Tape` records primitive applications in execution order, so the
node list is already topologically sorted and the backward sweep is a single
reverse pass. :class:`Node` overloads ``+ - * @`` and ``.T`` so model code
written against numpy arrays also runs on recorded nodes.

Backward always accumulates in float64, whatever dtype the forward used.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class TapeError(RuntimeError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# Each primitive: forward(values, attrs) -> value; backward(grad, values, out, attrs) -> input grads.

def _fwd_add(v, at):
    _check_broadcast("add", *v)
    return v[0] + v[1]


def _bwd_add(g, v, out, at):
    return [_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)]


def _fwd_sub(v, at):
    _check_broadcast("sub", *v)
    return v[0] - v[1]


def _bwd_sub(g, v, out, at):
    return [_unbroadcast(g, v[0].shape), -_unbroadcast(g, v[1].shape)]


def _fwd_hadamard(v, at):
    _check_broadcast("hadamard", *v)
    return v[0] * v[1]


def _bwd_hadamard(g, v, out, at):
    return [_unbroadcast(g * v[1], v[0].shape), _unbroadcast(g * v[0], v[1].shape)]


def _fwd_matmul(v, at):
    a, b = v
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return a @ b


def _bwd_matmul(g, v, out, at):
    a, b = v
    if a.ndim == 1 and b.ndim == 1:
        return [g * b, g * a]
    if a.ndim == 1:
        return [b @ g, np.outer(a, g)]
    if b.ndim == 1:
        return [np.outer(g, b), a.T @ g]
    return [g @ b.T, a.T @ g]


def _fwd_scale(v, at):
    return at["alpha"] * v[0]


def _bwd_scale(g, v, out, at):
    return [at["alpha"] * g]


def _fwd_tanh(v, at):
    return np.tanh(v[0])


def _bwd_tanh(g, v, out, at):
    return [g * (1.0 - out * out)]


def _fwd_sum(v, at):
    return np.sum(v[0])


def _bwd_sum(g, v, out, at):
    return [np.broadcast_to(g, v[0].shape).astype(np.float64)]


def _fwd_mean(v, at):
    return np.mean(v[0])


def _bwd_mean(g, v, out, at):
    return [np.broadcast_to(g / v[0].size, v[0].shape).astype(np.float64)]


def _fwd_transpose(v, at):
    return v[0].T


def _bwd_transpose(g, v, out, at):
    return [g.T]


def _fwd_reshape(v, at):
    return v[0].reshape(at["shape"])


def _bwd_reshape(g, v, out, at):
    return [g.reshape(v[0].shape)]


def _fwd_standardize(v, at):
    x = v[0]
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + at["eps"])


def _bwd_standardize(g, v, out, at):
    x = v[0]
    var = ((x - x.mean(axis=-1, keepdims=True)) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + at["eps"])
    gm = g.mean(axis=-1, keepdims=True)
    gy = (g * out).mean(axis=-1, keepdims=True)
    return [inv * (g - gm - out * gy)]


def _fwd_xent(v, at):
    logits = v[0]
    labels = at["labels"]
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"softmax_xent: logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("softmax_xent: label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return np.mean(logz - picked)


def _bwd_xent(g, v, out, at):
    logits = v[0].astype(np.float64)
    labels = at["labels"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(len(labels)), labels] -= 1.0
    return [g * p / len(labels)]


PRIMITIVES: dict[str, tuple[Callable, Callable]] = {
    "add": (_fwd_add, _bwd_add),
    "bias_add": (_fwd_add, _bwd_add),
    "sub": (_fwd_sub, _bwd_sub),
    "hadamard": (_fwd_hadamard, _bwd_hadamard),
    "matmul": (_fwd_matmul, _bwd_matmul),
    "matvec": (_fwd_matmul, _bwd_matmul),
    "scale": (_fwd_scale, _bwd_scale),
    "tanh": (_fwd_tanh, _bwd_tanh),
    "sum": (_fwd_sum, _bwd_sum),
    "mean": (_fwd_mean, _bwd_mean),
    "transpose": (_fwd_transpose, _bwd_transpose),
    "reshape": (_fwd_reshape, _bwd_reshape),
    "standardize": (_fwd_standardize, _bwd_standardize),
    "softmax_xent": (_fwd_xent, _bwd_xent),
}


@dataclass
class _Entry:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    attrs: dict = field(default_factory=dict)
    name: str | None = None


class Node:
    """Handle to a recorded value. Arithmetic on nodes records new nodes."""

    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, tape: "Tape", id: int):
        self.tape = tape
        self.id = id

    @property
    def value(self) -> np.ndarray:
        return self.tape.entries[self.id].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> "Node":
        return self.tape.record("transpose", [self])

    def _lift(self, other) -> "Node":
        if isinstance(other, Node):
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape.record("add", [self, self._lift(other)])

    def __radd__(self, other):
        return self.tape.record("add", [self._lift(other), self])

    def __sub__(self, other):
        return self.tape.record("sub", [self, self._lift(other)])

    def __rsub__(self, other):
        return self.tape.record("sub", [self._lift(other), self])

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.record("scale", [self], alpha=float(other))
        return self.tape.record("hadamard", [self, self._lift(other)])

    def __rmul__(self, other):
        if np.isscalar(other):
            return self.tape.record("scale", [self], alpha=float(other))
        return self.tape.record("hadamard", [self._lift(other), self])

    def __neg__(self):
        return self.tape.record("scale", [self], alpha=-1.0)

    def __matmul__(self, other):
        return self.tape.record("matmul", [self, self._lift(other)])

    def __rmatmul__(self, other):
        return self.tape.record("matmul", [self._lift(other), self])

    def __repr__(self):
        e = self.tape.entries[self.id]
        return f"Node(id={self.id}, op={e.op!r}, shape={e.value.shape})"


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self.entries: list[_Entry] = []
        self.leaves: dict[str, int] = {}
        self._done = False

    def _push(self, entry: _Entry) -> Node:
        if self._done:
            raise TapeError("tape already consumed by backward()")
        self.entries.append(entry)
        return Node(self, len(self.entries) - 1)

    def leaf(self, value, name: str) -> Node:
        """Register a differentiable parameter."""
        if name in self.leaves:
            raise TapeError(f"duplicate leaf name {name!r}")
        node = self._push(_Entry("leaf", (), np.asarray(value), name=name))
        self.leaves[name] = node.id
        return node

    def constant(self, value) -> Node:
        return self._push(_Entry("const", (), np.asarray(value)))

    def _resolve(self, x) -> int:
        if isinstance(x, Node):
            if x.tape is not self:
                raise TapeError("node belongs to a different tape")
            return x.id
        i = int(x)
        if not 0 <= i < len(self.entries):
            raise TapeError(f"unknown node id {i}")
        return i

    def record(self, op: str, inputs, **attrs) -> Node:
        """Apply primitive ``op`` to recorded ``inputs`` (nodes or ids)."""
        if op not in PRIMITIVES:
            raise ValueError(f"unknown primitive {op!r}")
        ids = tuple(self._resolve(x) for x in inputs)
        fwd, _ = PRIMITIVES[op]
        value = np.asarray(fwd([self.entries[i].value for i in ids], attrs))
        return self._push(_Entry(op, ids, value, attrs))

    def backward(self, output) -> dict[str, np.ndarray]:
        """Gradients of scalar ``output`` with respect to every leaf.

        Leaves that the output does not depend on receive zeros. A tape can
        be differentiated once.
        """
        if self._done:
            raise TapeError("backward() already ran on this tape")
        out_id = self._resolve(output)
        if self.entries[out_id].value.size != 1:
            raise TapeError(
                f"backward needs a scalar output, got shape {self.entries[out_id].value.shape}"
            )
        self._done = True
        grads: list[np.ndarray | None] = [None] * (out_id + 1)
        grads[out_id] = np.ones(self.entries[out_id].value.shape)
        for i in range(out_id, -1, -1):
            g = grads[i]
            e = self.entries[i]
            if g is None or not e.inputs:
                continue
            _, bwd = PRIMITIVES[e.op]
            vals = [self.entries[j].value for j in e.inputs]
            for j, gj in zip(e.inputs, bwd(g, vals, e.value, e.attrs)):
                gj = np.asarray(gj, dtype=np.float64)
                grads[j] = gj if grads[j] is None else grads[j] + gj
        result = {}
        for name, i in self.leaves.items():
            shape = self.entries[i].value.shape
            g = grads[i] if i <= out_id else None
            result[name] = np.zeros(shape) if g is None else np.asarray(g, dtype=np.float64).reshape(shape)
        return result


def tanh(x):
    if isinstance(x, Node):
        return x.tape.record("tanh", [x])
    return np.tanh(x)


def standardize(x, eps: float):
    """Zero-mean, unit-variance along the last axis (per sample)."""
    if isinstance(x, Node):
        return x.tape.record("standardize", [x], eps=eps)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x)


def value_and_grad(fn: Callable, params: Mapping[str, np.ndarray], *args):
    """Evaluate ``fn(param_nodes, *args)`` on a fresh tape and differentiate it."""
    tape = Tape()
    nodes = {name: tape.leaf(v, name) for name, v in params.items()}
    out = fn(nodes, *args)
    if not isinstance(out, Node):
        raise TapeError("function output does not depend on any parameter")
    return float(out.value), tape.backward(out)


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tol


def grad_check(fn: Callable, params: Mapping[str, np.ndarray], *args,
               eps: float = 1e-5, tol: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients of scalar ``fn`` with central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)`` with
    ``floor = 1e-6 * max(1, |f|)``, so coordinates whose true derivative is
    at round-off level are not judged on noise.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    f0, analytic = value_and_grad(fn, params, *args)
    if not np.isfinite(f0):
        raise FloatingPointError("grad_check: non-finite forward value")
    floor = 1e-6 * max(1.0, abs(f0))
    report = {}
    for name, p in params.items():
        worst = 0.0
        flat = p.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(value_of(fn(params, *args)))
            flat[i] = orig - eps
            fm = float(value_of(fn(params, *args)))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"grad_check: non-finite value perturbing {name}[{i}]")
            num = (fp - fm) / (2 * eps)
            denom = max(abs(ga[i]), abs(num), floor)
            worst = max(worst, abs(ga[i] - num) / denom)
        report[name] = worst
    return GradCheckReport(report, tol)
