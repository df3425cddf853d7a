"""A small reverse-mode autodiff core over numpy arrays.

Only the operators the segmentation network needs are provided. Each op
computes its forward value eagerly and, when any input requires a
gradient, records a closure that maps the output gradient to input
gradients. ``Tensor.backward`` replays those closures in exact reverse
creation order, accumulating additively where a tensor fans out.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ShapeError

_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a tape."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = next(_counter)
        self.name = name

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match {self.shape}")

        nodes, seen, stack = [], set(), [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(p for p in node._parents if p.requires_grad)
        nodes.sort(key=lambda t: t._seq, reverse=True)

        self.grad = grad if self.grad is None else self.grad + grad
        for node in nodes:
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            # interior gradients are not kept once propagated
            node.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ------------------------------------------------------------ elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                   lambda g: x._accumulate(g * mask))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return _result(s, (x,), lambda g: x._accumulate(g * s * (1 - s)))


def softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        x._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _result(s, (x,), backward)


def log_softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def backward(g):
        x._accumulate(g - s * g.sum(axis=-1, keepdims=True))

    return _result(out, (x,), backward)


# -------------------------------------------------------------- reshaping

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: x._accumulate(g.reshape(x.shape)))


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def gather_rows(x, index) -> Tensor:
    """``x[index]`` along the first axis; ``index`` may have any integer shape."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index.reshape(-1), g.reshape((-1,) + x.shape[1:]))
        x._accumulate(full)

    return _result(x.data[index], (x,), backward)


def take_pairs(x, rows, cols) -> Tensor:
    """Entries ``x[rows[i], cols[i]]`` of a 2-D tensor."""
    x = as_tensor(x)
    rows, cols = np.asarray(rows), np.asarray(cols)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, cols), g)
        x._accumulate(full)

    return _result(x.data[rows, cols], (x,), backward)


def scatter_mean_rows(x, index, n_cells) -> Tensor:
    """Mean of the rows of ``x`` sharing each cell id; empty cells are zero.

    Sums are accumulated in float64 whatever the input precision, so the
    float32 result does not depend on the order of the points.
    """
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if len(index) != x.shape[0]:
        raise ShapeError(f"{len(index)} cell ids for {x.shape[0]} rows")
    counts = np.bincount(index, minlength=n_cells)
    sums = np.zeros((n_cells,) + x.shape[1:], dtype=np.float64)
    np.add.at(sums, index, x.data)
    inv = (1.0 / np.maximum(counts, 1)).reshape((-1,) + (1,) * (x.ndim - 1))
    out = (sums * inv).astype(x.dtype)
    inv = inv.astype(x.dtype)

    def backward(g):
        x._accumulate((g * inv)[index])

    return _result(out, (x,), backward)


# ------------------------------------------------------------------ layers

def linear_pointwise(x, weight, bias=None) -> Tensor:
    """Per-point affine map ``x @ weight.T + bias`` over the last axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} vs weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        x._accumulate(g @ weight.data)
        g2 = g.reshape(-1, g.shape[-1])
        weight._accumulate(g2.T @ x.data.reshape(-1, x.shape[-1]))
        if bias is not None:
            bias._accumulate(g2.sum(axis=0))

    return _result(out, parents, backward)


def depthwise_pointwise(x, weight, bias=None) -> Tensor:
    """Per-channel scale and shift (depthwise convolution with kernel size 1)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.shape != (x.shape[-1],):
        raise ShapeError(f"depthwise: input {x.shape} vs weight {weight.shape}")
    out = mul(x, weight)
    return add(out, bias) if bias is not None else out


def conv2d_same(x, kernels, bias=None) -> Tensor:
    """3x3 cross-correlation with zero padding 1.

    ``x`` is H x W x C_in (or B x H x W x C_in); ``kernels`` is
    C_out x 3 x 3 x C_in.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.ndim != 4 or kernels.shape[1:3] != (3, 3) \
            or kernels.shape[3] != xd.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} vs kernels {kernels.shape}")
    b, h, w, cin = xd.shape
    cout = kernels.shape[0]
    xp = np.pad(xd, ((0, 0), (1, 1), (1, 1), (0, 0)))
    kd = kernels.data
    out = np.zeros((b * h * w, cout), dtype=np.result_type(xd, kd))
    for di in range(3):
        for dj in range(3):
            patch = xp[:, di:di + h, dj:dj + w, :].reshape(-1, cin)
            out += patch @ kd[:, di, dj, :].T
    parents = [x, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias {bias.shape} for {cout} output channels")
        out += bias.data
        parents.append(bias)
    out = out.reshape(b, h, w, cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        if x.requires_grad:
            gx = np.zeros_like(xp)
            for di in range(3):
                for dj in range(3):
                    gx[:, di:di + h, dj:dj + w, :] += (g2 @ kd[:, di, dj, :]).reshape(b, h, w, cin)
            gx = gx[:, 1:-1, 1:-1, :]
            x._accumulate(gx[0] if squeeze else gx)
        if kernels.requires_grad:
            gk = np.zeros_like(kd)
            for di in range(3):
                for dj in range(3):
                    patch = xp[:, di:di + h, dj:dj + w, :].reshape(-1, cin)
                    gk[:, di, dj, :] = g2.T @ patch
            kernels._accumulate(gk)
        if bias is not None:
            bias._accumulate(g2.sum(axis=0))

    return _result(out[0] if squeeze else out, parents, backward)


def max_over_neighbors(x) -> Tensor:
    """Max over the leading (neighbour) axis of a K x N x C tensor.

    The gradient goes to the first maximal neighbour when several tie.
    """
    x = as_tensor(x)
    arg = np.argmax(x.data, axis=0)
    out = np.take_along_axis(x.data, arg[None], axis=0)[0]

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg[None], g[None], axis=0)
        x._accumulate(full)

    return _result(out, (x,), backward)


@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics for one normalisation."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"

    @classmethod
    def create(cls, channels: int, dtype=np.float64, momentum=0.1, eps=1e-5):
        return cls(
            Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            np.zeros(channels, dtype=dtype),
            np.ones(channels, dtype=dtype),
            momentum, eps,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def batch_norm(x, state: BatchNormState, training: bool | None = None) -> Tensor:
    """Normalise the last axis over all leading axes.

    Train mode uses the biased batch variance and moves the running
    statistics by ``momentum`` (running variance uses the unbiased estimate).
    Eval mode normalises with the running statistics.
    """
    x = as_tensor(x)
    if training is None:
        training = state.mode == "train"
    c = state.channels
    if x.shape[-1] != c:
        raise ShapeError(f"batch_norm: input {x.shape} vs {c} channels")
    flat = x.data.reshape(-1, c)
    n = flat.shape[0]
    gamma, beta = state.gamma, state.beta
    if training:
        if n < 2:
            raise ShapeError("batch_norm in train mode needs at least 2 rows")
        mu = flat.mean(axis=0)
        centered = flat - mu
        var = (centered ** 2).mean(axis=0)
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mu).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * var * n / (n - 1)).astype(
            state.running_var.dtype)
    else:
        mu, var = state.running_mean, state.running_var
        centered = flat - mu
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = centered * inv_std
    out = (xhat * gamma.data + beta.data).reshape(x.shape).astype(x.dtype)

    def backward(g):
        g = g.reshape(-1, c)
        gamma._accumulate((g * xhat).sum(axis=0))
        beta._accumulate(g.sum(axis=0))
        if not x.requires_grad:
            return
        dxhat = g * gamma.data
        if training:
            dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        x._accumulate(dx.reshape(x.shape).astype(x.dtype))

    return _result(out, (x, gamma, beta), backward)


# -------------------------------------------------------------- checking

def grad_check(fn, inputs, directions=None, eps=1e-5, seed=0, abs_floor=1e-8, joint=False) -> float:
    """Largest relative error between analytic and central-difference derivatives.

    ``fn`` maps the tensors in ``inputs`` to an output tensor, which is
    reduced to a scalar with a fixed random weighting. For each input a
    directional derivative along ``directions[i]`` (random normal by
    default) is compared against ``(f(x + eps d) - f(x - eps d)) / (2 eps)``.
    With ``joint=True`` all inputs move together along one combined
    direction, which checks the full gradient at once and avoids dividing
    by inputs whose exact gradient is zero.
    """
    rng = np.random.default_rng(seed)
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    weight = rng.standard_normal(out.shape)
    out.backward(weight.astype(out.dtype))
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]
    if directions is None:
        directions = [rng.standard_normal(t.shape) for t in inputs]

    def scalar():
        with no_grad():
            return float((fn(*inputs).data * weight).sum())

    groups = [list(range(len(inputs)))] if joint else [[i] for i in range(len(inputs))]
    worst = 0.0
    for group in groups:
        base = {i: inputs[i].data.copy() for i in group}
        for i in group:
            inputs[i].data = base[i] + eps * directions[i]
        f_plus = scalar()
        for i in group:
            inputs[i].data = base[i] - eps * directions[i]
        f_minus = scalar()
        for i in group:
            inputs[i].data = base[i]
        fd = (f_plus - f_minus) / (2 * eps)
        an = float(np.sum([(analytic[i] * directions[i]).sum() for i in group]))
        err = abs(an - fd) / max(abs(an), abs(fd), abs_floor)
        worst = max(worst, err)
    for t in inputs:
        t.grad = None
    return worst
