"""Reverse-mode automatic differentiation over numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it in
execution order, so the tape is topologically sorted by construction and the
backward sweep is a single reverse pass.
"""

import contextlib
import contextvars

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, NumericError, ShapeError

_ACTIVE_TAPE = contextvars.ContextVar("im2markup_active_tape", default=None)


class _Node:
    __slots__ = ("op", "out", "inputs", "backward")

    def __init__(self, op, out, inputs, backward):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed differentiable operations.

    Use as a context manager; operations whose inputs require gradients are
    recorded while the tape is active.
    """

    def __init__(self):
        self.nodes = []
        self._tokens = []

    def __enter__(self):
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._tokens.pop())
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, root):
        """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf.

        Intermediate adjoints live only for the duration of the call, so
        sweeping the same tape twice doubles the leaf gradients.
        """
        if not isinstance(root, Tensor) or root.data.size != 1:
            shape = getattr(root, "shape", None)
            raise ContractError(f"backward needs a scalar root, got shape {shape}")
        if not self.nodes:
            raise ContractError("backward called on an empty tape")
        adjoint = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = adjoint.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += gi
                else:
                    key = id(inp)
                    prev = adjoint.get(key)
                    adjoint[key] = gi if prev is None else prev + gi


@contextlib.contextmanager
def no_grad():
    """Suspend recording on the active tape."""
    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


def backward(root):
    """Run the backward sweep on the tape that recorded ``root``."""
    tape = getattr(root, "_tape", None)
    if tape is None:
        raise ContractError("root was not produced under an active tape")
    tape.backward(root)


class Tensor:
    """Dense n-dimensional array participating in a differentiation tape."""

    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if dtype is None and type(data) is np.ndarray and data.dtype.kind == "f":
            arr = data
        else:
            arr = np.asarray(data, dtype=dtype)
            if dtype is None and arr.dtype.kind != "f":
                arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._node = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=self.dtype))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if isinstance(like, Tensor) else None
    return Tensor(np.asarray(x, dtype=dtype))


def apply_op(op, data, inputs, backward_fn):
    """Wrap ``data`` as the result of ``op`` and record it when needed.

    ``backward_fn(g)`` must return one gradient (or None) per input.
    This is also the extension point for custom operations.
    """
    # a finite sum implies finite entries; only an overflowing sum needs the full scan
    if not np.isfinite(np.add.reduce(data, axis=None)) and not np.isfinite(data).all():
        raise NumericError(op)
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _Node(op, out, tuple(inputs), backward_fn)
        out._tape = tape
        tape.nodes.append(out._node)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b):
    a, b = _lift(a, b), _lift(b, a)
    _broadcast_check("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return apply_op("add", a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _lift(a, b), _lift(b, a)
    _broadcast_check("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return apply_op("sub", a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = _lift(a, b), _lift(b, a)
    _broadcast_check("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return apply_op("mul", a.data * b.data, (a, b), bw)


def neg(a):
    return apply_op("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    a, b = _lift(a, b), _lift(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return apply_op("matmul", np.matmul(a.data, b.data), (a, b), bw)


def tanh(x):
    out = np.tanh(x.data)
    return apply_op("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    # tanh form avoids exp overflow for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return apply_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x):
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return apply_op("softmax", out, (x,), bw)


def log(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return apply_op("log", out, (x,), lambda g: (g / x.data,))


def clamp_min(x, lo):
    out = np.maximum(x.data, lo)
    mask = x.data >= lo
    return apply_op("clamp_min", out, (x,), lambda g: (g * mask,))


def sum_(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return apply_op("sum", np.asarray(out), (x,), bw)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return sum_(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def concat(tensors, axis=-1):
    tensors = [_lift(t, tensors[0]) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return apply_op("concat", out, tuple(tensors), bw)


def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return apply_op("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x, start=1):
    return reshape(x, x.shape[:start] + (-1,))


def transpose(x, axes):
    inverse = np.argsort(axes)
    return apply_op("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(x, index):
    out = x.data[index]
    basic = _is_basic_index(index)

    def bw(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return apply_op("getitem", np.array(out, copy=True), (x,), bw)


def embedding(weight, ids):
    """Row lookup ``weight[ids]``; gradient flows only to the selected rows."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ContractError(
            f"embedding: ids must lie in [0, {weight.shape[0]}), got range "
            f"[{ids.min()}, {ids.max()}]"
        )

    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        return (gw,)

    return apply_op("embedding", weight.data[ids], (weight,), bw)


def conv2d(x, w):
    """3x3 cross-correlation, stride 1, zero "same" padding, NHWC layout.

    ``w`` has shape (3, 3, C_in, C_out).
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[:2] != (3, 3) or w.shape[2] != x.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    n, h, wd, c = x.shape
    f = w.shape[3]
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2))
    cols = cols.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * wd, 9 * c)
    wmat = w.data.reshape(9 * c, f)
    out = (cols @ wmat).reshape(n, h, wd, f)

    def bw(g):
        g2 = g.reshape(-1, f)
        gw = (cols.T @ g2).reshape(w.shape)
        gcols = (g2 @ wmat.T).reshape(n, h, wd, 3, 3, c)
        gxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                gxp[:, i:i + h, j:j + wd, :] += gcols[:, :, :, i, j, :]
        return gxp[:, 1:-1, 1:-1, :], gw

    return apply_op("conv2d", out, (x, w), bw)


def maxpool2d(x):
    """2x2 max pooling with stride 2, NHWC layout."""
    if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"maxpool2d: need NHWC input with even H and W, got {x.shape}")
    n, h, w, c = x.shape
    windows = (
        x.data.reshape(n, h // 2, 2, w // 2, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, h // 2, w // 2, c, 4)
    )
    arg = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, arg, axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, arg, g[..., None], axis=-1)
        gx = (
            gw.reshape(n, h // 2, w // 2, c, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, h, w, c)
        )
        return (gx,)

    return apply_op("maxpool2d", out, (x,), bw)
