"""Small float64 tensor library with reverse-mode differentiation.

Operations record their inputs and a backward closure on the output tensor;
:meth:`Tensor.backward` walks that tape in reverse topological order and
then drops it.  Only what the encoder, the aggregation layer, the heads and
the CRF need is implemented.
"""

from __future__ import annotations

import contextlib
import json
import math
import struct
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True


class ShapeError(ValueError):
    def __init__(self, op, *shapes, detail=""):
        shp = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shp}" + (f" ({detail})" if detail else ""))
        self.op = op
        self.shapes = shapes


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward", self.shape, detail="implicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._parents = ()
            node._backward = None

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis, keepdims) * (1.0 / n)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    """Output tensor of an op; ``backward`` maps the output grad to parent grads."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


custom_op = _make


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    return _make(data, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                          _unbroadcast(g * a.data, b.shape)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def gelu(x):
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data ** 2) / math.sqrt(2.0 * math.pi)
    return _make(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


def tanh(x):
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


# -- shape -------------------------------------------------------------------

def reshape(a, shape):
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _make(data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=()):
    axes = tuple(axes) or tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, i, j):
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def getitem(a, index):
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)
    return _make(a.data[index], (a,), backward)


def take(a, indices):
    """Gather rows of ``a`` (embedding lookup when ``a`` is a table)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[0]):
        raise ShapeError("take", a.shape, indices.shape, detail="index out of range")

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        return (full,)
    return _make(a.data[indices], (a,), backward)


def embedding_lookup(table, ids):
    return take(table, ids)


def tsum(a, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # shared weight: fold the batch dims into one GEMM
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))
    return _make(data, (a, b), backward)


def linear(x, weight, bias=None):
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- normalization and probabilities ------------------------------------------

def softmax(x, axis=-1, additive_mask=None):
    """Softmax along ``axis``; ``additive_mask`` (a plain array) is added to the logits first."""
    z = x.data if additive_mask is None else x.data + additive_mask
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _make(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(x, gamma, beta, eps=1e-12):
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape))
    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def cross_entropy(logits, labels, reduction="mean"):
    """Cross-entropy of rows of ``logits`` (..., C) against integer ``labels`` (...)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.shape[:-1] != labels.shape:
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    n = max(labels.size, 1)
    scale = 1.0 / n if reduction == "mean" else 1.0
    loss = -picked.sum() * scale

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, labels[..., None],
                          np.take_along_axis(grad, labels[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * (g * scale),)
    return _make(loss, (logits,), backward)


# -- parameters and optimization ----------------------------------------------

class ParameterStore:
    """Named parameters plus Adam moments and the step counter."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((f"param/{k}", t.data) for k, t in self.params.items())
        for k in self.params:
            if k in self.m:
                out[f"adam_m/{k}"] = self.m[k]
                out[f"adam_v/{k}"] = self.v[k]
        return out

    def load_arrays(self, arrays: dict, step: int = 0):
        for k, t in self.params.items():
            src = arrays[f"param/{k}"]
            if src.shape != t.data.shape:
                raise ShapeError("load", t.data.shape, src.shape, detail=k)
            t.data = np.array(src, dtype=np.float64)
        self.m = {k: np.array(arrays[f"adam_m/{k}"]) for k in self.params if f"adam_m/{k}" in arrays}
        self.v = {k: np.array(arrays[f"adam_v/{k}"]) for k in self.params if f"adam_v/{k}" in arrays}
        self.step = step


def adam_step(store: ParameterStore, lr: float = 5e-5, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, grads: dict | None = None) -> None:
    """One Adam update using ``grads`` or, by default, each parameter's ``.grad``."""
    grads = grads if grads is not None else {k: t.grad for k, t in store.params.items()}
    for k, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            bad = int((~np.isfinite(g)).sum())
            raise NonFiniteError(f"non-finite gradient in {k!r} ({bad} entries) at step {store.step + 1}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in store.params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p.data)
        m = store.m.get(k)
        if m is None:
            m = store.m[k] = np.zeros_like(p.data)
            store.v[k] = np.zeros_like(p.data)
        v = store.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def linear_schedule(step: int, total: int, base_lr: float, warmup: int = 0) -> float:
    """Linear warm-up to ``base_lr`` followed by linear decay to zero at ``total``."""
    if warmup and step < warmup:
        return base_lr * (step + 1) / warmup
    if total <= warmup:
        return base_lr
    return base_lr * max(0.0, (total - step) / (total - warmup))


# -- checkpoint container -------------------------------------------------------
# magic | u32 version | u32 header length | JSON header | f64 payload | u32 crc32

CHECKPOINT_MAGIC = b"EGL1"


class CheckpointError(ValueError):
    pass


def save_tensors(path, arrays: "OrderedDict[str, np.ndarray]", meta: dict | None = None) -> None:
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "f64", "offset": len(payload)})
        payload += arr.tobytes()
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    body = CHECKPOINT_MAGIC + struct.pack("<II", 1, len(header)) + header + bytes(payload)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_tensors(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    if len(blob) < 16 or zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != 1:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    base = 12 + hlen
    arrays = OrderedDict()
    for e in header["tensors"]:
        if e["dtype"] != "f64":
            raise CheckpointError(f"unsupported dtype {e['dtype']}")
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = np.frombuffer(blob, "<f8", count, base + e["offset"]).reshape(e["shape"]).copy()
    return arrays, header["meta"]


# -- gradient checking ----------------------------------------------------------

def relative_error(analytic, numeric, floor=1e-3):
    """|a - n| / max(|a|, |n|, floor).  With floor=1e-3 a value below 1e-4
    means either relative error < 1e-4 or absolute error < 1e-7."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_difference_check(loss_fn, params: dict, n_samples=200, h=1e-5, seed=0):
    """Compare analytic gradients of ``loss_fn()`` with central differences.

    ``params`` maps names to leaf tensors; ``n_samples=None`` checks every
    entry instead of a size-weighted sample.  Returns (max relative error,
    list of (name, index, analytic, numeric)).
    """
    for t in params.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy()
                for k, t in params.items()}
    rng = np.random.default_rng(seed)
    names = list(params)
    sizes = np.array([params[k].data.size for k in names], dtype=np.float64)
    if n_samples is None:
        picks = [(k, idx) for k in names for idx in np.ndindex(params[k].data.shape)]
    else:
        picks = []
        for _ in range(n_samples):
            k = names[int(rng.choice(len(names), p=sizes / sizes.sum()))]
            picks.append((k, np.unravel_index(int(rng.integers(params[k].data.size)), params[k].data.shape)))
    rows = []
    with no_grad():
        for k, idx in picks:
            t = params[k]
            orig = t.data[idx]
            t.data[idx] = orig + h
            up = loss_fn().item()
            t.data[idx] = orig - h
            down = loss_fn().item()
            t.data[idx] = orig
            rows.append((k, idx, float(analytic[k][idx]), (up - down) / (2 * h)))
    err = max((float(relative_error(a, n)) for _, _, a, n in rows), default=0.0)
    return err, rows
