"""Minimal reverse-mode differentiation over dense numpy arrays.

This is deliberately a closed op set rather than a general framework: every
operation the bottleneck-fusion model needs has a hand-written backward rule
that the test suite checks against central finite differences.  A Tape
records nodes in execution order while it is active (thread-local, so
distinct tapes can run on distinct threads); backward walks the node list
once in reverse, accumulating gradients additively across fan-out and
depositing them on leaf tensors with requires_grad set.

Stochastic ops never draw randomness themselves: gaussian_sample takes the
noise vector and dropout takes the mask, so a single externally seeded RNG
controls a whole training step and identical seeds reproduce identical
forward values and gradients bitwise.

The information measures enter the graph as custom nodes whose backward is
the analytic gradient from the entropy module (the exact same code path the
gradient tests exercise) scaled by the upstream scalar.
"""

from __future__ import annotations

import threading

import numpy as np

from . import entropy as _entropy

_STATE = threading.local()


class AutodiffError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


class _Node:
    __slots__ = ("op", "output", "inputs", "backward")

    def __init__(self, op, output, inputs, backward):
        self.op = op
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered op record; topological by construction."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._tracked: set[int] = set()

    def __enter__(self):
        stack = getattr(_STATE, "tapes", None)
        if stack is None:
            stack = _STATE.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tapes.pop()
        return False

    def _wants(self, inputs) -> bool:
        return any(
            isinstance(t, Tensor) and (t.requires_grad or id(t) in self._tracked)
            for t in inputs
        )

    def _record(self, op, output, inputs, backward):
        self._nodes.append(_Node(op, output, inputs, backward))
        self._tracked.add(id(output))

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf."""
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        if loss.requires_grad:
            loss.grad = (0.0 if loss.grad is None else loss.grad) + np.ones_like(loss.data)
        for node in reversed(self._nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for t, gt in zip(node.inputs, node.backward(g)):
                if gt is None or not isinstance(t, Tensor):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gt
                else:
                    grads[key] = gt
        for node in self._nodes:
            for t in node.inputs:
                if isinstance(t, Tensor) and t.requires_grad and id(t) in grads:
                    g = grads.pop(id(t))
                    t.grad = g if t.grad is None else t.grad + g


def _active_tape() -> Tape | None:
    stack = getattr(_STATE, "tapes", None)
    return stack[-1] if stack else None


def _make(op: str, out_data: np.ndarray, inputs, backward) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise AutodiffError(f"non-finite values produced by op '{op}'")
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and tape._wants(inputs):
        tape._record(op, out, tuple(inputs), backward)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] > 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --- primitives --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise AutodiffError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make("matmul", out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise AutodiffError(f"add: incompatible shapes {a.data.shape} + {b.data.shape}")

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make("add", out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise AutodiffError(f"sub: incompatible shapes {a.data.shape} - {b.data.shape}")

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make("sub", out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise AutodiffError(f"mul: incompatible shapes {a.data.shape} * {b.data.shape}")

    def backward(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make("mul", out, (a, b), backward)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("scalar_mul", a.data * c, (a,), lambda g: (g * c,))


def concat(tensors, axis: int) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _make("concat", out, tuple(tensors), backward)


def slice_(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _make("slice", out, (a,), backward)


def mean_pool(a: Tensor, axis: int) -> Tensor:
    size = a.data.shape[axis]
    out = a.data.mean(axis=axis)

    def backward(g):
        return (np.repeat(np.expand_dims(g, axis), size, axis=axis) / size,)

    return _make("mean_pool", out, (a,), backward)


def reduce_sum(a: Tensor) -> Tensor:
    return _make("reduce_sum", np.sum(a.data), (a,), lambda g: (np.full_like(a.data, g),))


def reduce_mean(a: Tensor) -> Tensor:
    size = a.data.size
    return _make("reduce_mean", np.mean(a.data), (a,), lambda g: (np.full_like(a.data, g / size),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make("exp", y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)
    return _make("log", out, (a,), lambda g: (g / a.data,))


def abs_(a: Tensor) -> Tensor:
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data > lo) & (a.data < hi)
    return _make("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def softmax(a: Tensor, axis: int = -1, scale: float = 1.0) -> Tensor:
    z = a.data * scale
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (scale * y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make("softmax", y, (a,), backward)


def swapaxes_last(a: Tensor) -> Tensor:
    return _make(
        "swapaxes_last",
        np.swapaxes(a.data, -1, -2),
        (a,),
        lambda g: (np.swapaxes(g, -1, -2),),
    )


def expand_batch(a: Tensor, n: int) -> Tensor:
    out = np.broadcast_to(a.data[None], (n,) + a.data.shape).copy()
    return _make("expand_batch", out, (a,), lambda g: (g.sum(axis=0),))


def gaussian_sample(mu: Tensor, log_sigma: Tensor, eps: np.ndarray) -> Tensor:
    """Reparameterized draw mu + exp(log_sigma) * eps with external noise."""
    eps = np.asarray(eps, dtype=np.float64)
    sig = np.exp(log_sigma.data)
    out = mu.data + sig * eps

    def backward(g):
        return g, g * eps * sig

    return _make("gaussian_sample", out, (mu, log_sigma), backward)


def dropout(a: Tensor, rate: float, mask: np.ndarray | None = None) -> Tensor:
    """Inverted dropout: mask is a 0/1 array drawn by the caller's RNG.

    mask=None means eval mode and is an exact identity (no tape node).
    """
    if not 0.0 <= rate < 1.0:
        raise AutodiffError(f"dropout rate must be in [0, 1), got {rate}")
    if mask is None or rate == 0.0:
        return a
    keep = 1.0 - rate
    m = np.asarray(mask, dtype=np.float64) / keep
    return _make("dropout", a.data * m, (a,), lambda g: (g * m,))


def entropy_node(x: Tensor, cfg, k: int | None = None) -> Tensor:
    """Low-rank entropy of a 2-d batch as a scalar graph node."""
    h, gx = _entropy.entropy_value_and_grad(x.data, cfg, k=k)
    return _make("entropy", np.float64(h), (x,), lambda g: (g * gx,))


def mutual_information_node(x: Tensor, y: Tensor, cfg, k: int | None = None) -> Tensor:
    """Low-rank mutual information between two 2-d batches as a scalar node."""
    i, gx, gy = _entropy.mutual_information_value_and_grads(x.data, y.data, cfg, k=k)
    return _make("mutual_information", np.float64(i), (x, y), lambda g: (g * gx, g * gy))
