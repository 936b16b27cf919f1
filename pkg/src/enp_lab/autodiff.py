"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built eagerly: every op computes its value on construction and
records a closure that pushes gradients to its inputs. A fresh graph is built
for every training step.

    >>> x = Tensor(np.array([0.0, 1.0]))
    >>> y = logsumexp(x)
    >>> grads = backward(y)
    >>> np.allclose(grads[x], softmax(x).value)
    True
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class Tensor:
    """A node of the computation graph holding a float64 value.

    Leaves are created directly; interior nodes come from the op functions
    below. ``grad`` is populated by :func:`backward`.
    """

    __slots__ = ("value", "grad", "parents", "op", "_backward", "name")

    def __init__(self, value, parents=(), op="leaf", name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.op = op
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor({self.op}{label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def constant(value):
    """A leaf that is excluded from gradient maps (detached input)."""
    return Tensor(value, op="const")


def _mismatch(op, *shapes):
    joined = " and ".join(str(s) for s in shapes)
    return ShapeError(f"{op}: incompatible shapes {joined}")


def _accumulate(node, g):
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        node.grad += g


# ---------------------------------------------------------------------------
# ops


def matmul(a, b):
    """Matrix product following ``numpy.matmul`` rules for 1-D and 2-D operands."""
    if a.value.ndim not in (1, 2) or b.value.ndim not in (1, 2):
        raise _mismatch("matmul", a.shape, b.shape)
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise _mismatch("matmul", a.shape, b.shape)
    out = Tensor(a.value @ b.value, (a, b), "matmul")

    def _backward(g):
        av, bv = a.value, b.value
        if av.ndim == 2 and bv.ndim == 2:
            ga, gb = g @ bv.T, av.T @ g
        elif av.ndim == 2:  # (n, k) @ (k,)
            ga, gb = np.outer(g, bv), av.T @ g
        elif bv.ndim == 2:  # (k,) @ (k, m)
            ga, gb = bv @ g, np.outer(av, g)
        else:
            ga, gb = g * bv, g * av
        _accumulate(a, ga)
        _accumulate(b, gb)

    out._backward = _backward
    return out


def add(a, b):
    """Elementwise sum. Either operand may be size-1; ``b`` may be a trailing-shape bias."""
    if a.shape != b.shape and a.value.size == 1 and b.value.size > 1:
        a, b = b, a
    if a.shape == b.shape:
        mode = "same"
    elif b.value.size == 1:
        mode = "scalar"
    elif b.value.ndim < a.value.ndim and a.shape[a.value.ndim - b.value.ndim:] == b.shape:
        mode = "bias"
    else:
        raise _mismatch("add", a.shape, b.shape)
    bval = b.value.reshape(()) if mode == "scalar" else b.value
    out = Tensor(a.value + bval, (a, b), "add")

    def _backward(g):
        _accumulate(a, g)
        if mode == "same":
            _accumulate(b, g)
        elif mode == "scalar":
            _accumulate(b, np.full(b.shape, g.sum()))
        else:
            lead = tuple(range(a.value.ndim - b.value.ndim))
            _accumulate(b, g.sum(axis=lead))

    out._backward = _backward
    return out


def multiply(a, b):
    if a.shape != b.shape:
        raise _mismatch("multiply", a.shape, b.shape)
    out = Tensor(a.value * b.value, (a, b), "multiply")

    def _backward(g):
        _accumulate(a, g * b.value)
        _accumulate(b, g * a.value)

    out._backward = _backward
    return out


def scale(a, c):
    c = float(c)
    out = Tensor(a.value * c, (a,), "scale")
    out._backward = lambda g: _accumulate(a, g * c)
    return out


def tanh(a):
    y = np.tanh(a.value)
    out = Tensor(y, (a,), "tanh")
    out._backward = lambda g: _accumulate(a, g * (1.0 - y * y))
    return out


def relu(a):
    mask = (a.value > 0).astype(np.float64)
    out = Tensor(a.value * mask, (a,), "relu")
    out._backward = lambda g: _accumulate(a, g * mask)
    return out


def exp(a):
    y = np.exp(a.value)
    out = Tensor(y, (a,), "exp")
    out._backward = lambda g: _accumulate(a, g * y)
    return out


def log(a):
    out = Tensor(np.log(a.value), (a,), "log")
    out._backward = lambda g: _accumulate(a, g / a.value)
    return out


def _softmax_np(v):
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a):
    """Softmax along the last axis."""
    y = _softmax_np(a.value)
    out = Tensor(y, (a,), "softmax")

    def _backward(g):
        _accumulate(a, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    out._backward = _backward
    return out


def logsumexp(a):
    """Log-sum-exp along the last axis, computed with max subtraction."""
    v = a.value
    m = v.max(axis=-1, keepdims=True)
    val = (m + np.log(np.exp(v - m).sum(axis=-1, keepdims=True)))[..., 0]
    out = Tensor(val, (a,), "logsumexp")

    def _backward(g):
        _accumulate(a, np.asarray(g)[..., None] * _softmax_np(v))

    out._backward = _backward
    return out


def sum(a):  # noqa: A001 - mirrors numpy naming
    out = Tensor(a.value.sum(), (a,), "sum")
    out._backward = lambda g: _accumulate(a, np.full(a.shape, float(g)))
    return out


def mean(a, axis=None):
    """Mean over all entries, or over ``axis`` (int) keeping the rest."""
    if axis is None:
        n = a.value.size
        out = Tensor(a.value.mean(), (a,), "mean")
        out._backward = lambda g: _accumulate(a, np.full(a.shape, float(g) / n))
        return out
    n = a.shape[axis]
    out = Tensor(a.value.mean(axis=axis), (a,), "mean")
    out._backward = lambda g: _accumulate(
        a, np.broadcast_to(np.expand_dims(g, axis) / n, a.shape)
    )
    return out


def index_select(a, indices, axis=0):
    """Gather entries along ``axis``; repeated indices accumulate in backward."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < -a.shape[axis] or idx.max() >= a.shape[axis]):
        raise ShapeError(f"index_select: index out of range for axis {axis} of shape {a.shape}")
    out = Tensor(np.take(a.value, idx, axis=axis), (a,), "index_select")

    def _backward(g):
        full = np.zeros(a.shape)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0) if idx.ndim else g)
        _accumulate(a, full)

    out._backward = _backward
    return out


def concatenate(tensors, axis=-1):
    tensors = list(tensors)
    ndim = tensors[0].value.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.value.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise _mismatch("concatenate", *(x.shape for x in tensors))
    out = Tensor(np.concatenate([t.value for t in tensors], axis=ax), tensors, "concatenate")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def _backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * ndim
            sl[ax] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    out._backward = _backward
    return out


def reshape(a, shape):
    shape = tuple(shape)
    if int(np.prod(shape)) != a.value.size:
        raise _mismatch("reshape", a.shape, shape)
    out = Tensor(a.value.reshape(shape), (a,), "reshape")
    out._backward = lambda g: _accumulate(a, np.reshape(g, a.shape))
    return out


def segment_sum(a, segment_ids, num_segments):
    """Sum entries of a 1-D tensor into ``num_segments`` buckets."""
    ids = np.asarray(segment_ids, dtype=np.int64)
    if a.value.ndim != 1 or ids.shape != a.shape:
        raise _mismatch("segment_sum", a.shape, ids.shape)
    out = Tensor(np.bincount(ids, weights=a.value, minlength=num_segments), (a,), "segment_sum")
    out._backward = lambda g: _accumulate(a, g[ids])
    return out


# ---------------------------------------------------------------------------
# graph traversal


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def forward(root):
    """Value of ``root``. Values are computed eagerly, so this only reads the cache."""
    return root.value


def backward(root):
    """Populate ``.grad`` on every node and return ``{leaf: gradient}``.

    Constant leaves (see :func:`constant`) are left out of the returned map.
    Gradients are reset first, so repeated calls give identical results.
    """
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    order = _topological(root)
    for node in order:
        node.grad = None
    root.grad = np.ones(root.shape)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    grads = {}
    for node in order:
        if not node.parents and node.op == "leaf":
            grads[node] = node.grad if node.grad is not None else np.zeros(node.shape)
    return grads


# ---------------------------------------------------------------------------
# parameter checkpoints


def save_parameters(path, params, header=None):
    """Write named float64 arrays plus a JSON header to ``path``.

    Arrays are stored as base64 of their little-endian bytes so that values
    round-trip exactly.
    """
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "header": header or {},
        "parameters": {
            name: {
                "shape": list(arr.shape),
                "data": base64.b64encode(np.asarray(arr, dtype="<f8").tobytes()).decode("ascii"),
            }
            for name, arr in sorted(params.items())
        },
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_parameters(path):
    """Inverse of :func:`save_parameters`; returns ``(params, header)``."""
    payload = json.loads(Path(path).read_text())
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    params = {}
    for name, entry in payload["parameters"].items():
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        params[name] = arr.reshape(entry["shape"])
    return params, payload.get("header", {})
