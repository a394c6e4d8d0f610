"""
Dense tensors with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays. Every primitive computes its forward
value with numpy and, when any input requires a gradient, records a
vector-Jacobian product on the active tape. ``backward(loss)`` replays the
tape in reverse and then discards it.
"""

import dataclasses
import itertools
import logging
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from utils.errors import ShapeError

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-6

_ids = itertools.count()
_state = threading.local()
_default_dtype = np.float64


def set_default_dtype(dtype):
    """Set the dtype new tensors get when none is given (float32 or float64)."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"Unsupported tensor dtype: {dtype}")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


@contextmanager
def default_dtype(dtype):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def _contiguous(data):
    # ascontiguousarray promotes 0-d arrays to shape (1,)
    return np.require(data, requirements="C")


class Tensor:
    """
    An n-dimensional array that can take part in gradient tracking.

    Leaf tensors created with ``requires_grad=True`` own a zero-initialised
    ``grad`` array that ``backward`` accumulates into. Tensors produced by
    operations never store gradients.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        dtype = dtype or _default_dtype
        self.data = _contiguous(np.asarray(data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.is_leaf = True
        self.id = next(_ids)

    @classmethod
    def _from_op(cls, data, requires_grad):
        out = cls.__new__(cls)
        out.data = _contiguous(data)
        out.requires_grad = requires_grad
        out.grad = None
        out.is_leaf = False
        out.id = next(_ids)
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data.copy()

    def item(self):
        return self.data.item()

    def zero_grad(self):
        if self.requires_grad and self.is_leaf:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # operator sugar
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = axes[0]
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


@dataclasses.dataclass
class TapeEntry:
    name: str
    output_id: int
    inputs: tuple
    vjp: object


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self):
        self.entries = []

    def record(self, name, output, inputs, vjp):
        self.entries.append(TapeEntry(name, output.id, tuple(inputs), vjp))

    def clear(self):
        self.entries.clear()

    def __len__(self):
        return len(self.entries)

    def __enter__(self):
        self._previous = getattr(_state, "tape", None)
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._previous
        return False


def current_tape():
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = Tape()
        _state.tape = tape
    return tape


def reset_tape():
    """Drop everything recorded on this thread's active tape."""
    current_tape().clear()


def grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    if dtype is None and isinstance(value, np.ndarray) and value.dtype in (np.float32, np.float64):
        dtype = value.dtype.type
    return Tensor(value, dtype=dtype)


def record_op(name, data, inputs, vjp):
    """
    Wrap a forward result and register its backward rule.

    Parameters:
    name (str): Operation name (shown in error messages and tape dumps)
    data (ndarray): Forward value
    inputs (sequence of Tensor): Operands, in the order vjp returns grads
    vjp (callable): Maps the output gradient to a tuple of input gradients
        (None for inputs that need none)

    Returns:
    Tensor: The operation output
    """
    needs_grad = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor._from_op(data, needs_grad)
    if needs_grad:
        current_tape().record(name, out, inputs, vjp)
    return out


def backward(loss):
    """
    Fill ``grad`` of every requires-grad leaf reachable from ``loss``.

    The active tape is replayed newest-first and cleared afterwards.
    """
    if loss.size != 1:
        raise ShapeError("backward", loss.shape, (), detail="loss must be a scalar")
    tape = current_tape()
    if loss.is_leaf:
        if loss.requires_grad:
            loss.grad += 1.0
        tape.clear()
        return

    grads = {loss.id: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output_id, None)
        if g is None:
            continue
        input_grads = entry.vjp(g)
        for inp, gi in zip(entry.inputs, input_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                inp.grad += gi
            elif inp.id in grads:
                grads[inp.id] = grads[inp.id] + gi
            else:
                grads[inp.id] = gi
    tape.clear()


def named_parameters(tree, prefix=""):
    """
    Flatten a nest of dataclasses, lists and dicts into {dotted.name: Tensor}.

    Only Tensor leaves are returned; other field values are skipped.
    """
    found = {}

    def visit(node, name):
        if isinstance(node, Tensor):
            found[name] = node
        elif dataclasses.is_dataclass(node) and not isinstance(node, type):
            for f in dataclasses.fields(node):
                visit(getattr(node, f.name), f"{name}.{f.name}" if name else f.name)
        elif isinstance(node, (list, tuple)):
            for i, item in enumerate(node):
                visit(item, f"{name}.{i}" if name else str(i))
        elif isinstance(node, dict):
            for key, item in node.items():
                visit(item, f"{name}.{key}" if name else str(key))

    visit(tree, prefix)
    return found


def count_parameters(tree):
    return int(sum(t.size for t in named_parameters(tree).values() if t.requires_grad))


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair_dtype(a, b):
    # python scalars follow the tensor operand's precision
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, dtype=a.dtype.type)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, dtype=b.dtype.type), b
    return as_tensor(a), as_tensor(b)


def add(a, b):
    a, b = _pair_dtype(a, b)
    _broadcast("add", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record_op("add", a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = _pair_dtype(a, b)
    _broadcast("sub", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record_op("sub", a.data - b.data, (a, b), vjp)


def mul(a, b):
    a, b = _pair_dtype(a, b)
    _broadcast("mul", a, b)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record_op("mul", a.data * b.data, (a, b), vjp)


def div(a, b):
    a, b = _pair_dtype(a, b)
    _broadcast("div", a, b)
    out = a.data / b.data

    def vjp(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return record_op("div", out, (a, b), vjp)


def neg(x):
    x = as_tensor(x)
    return record_op("neg", -x.data, (x,), lambda g: (-g,))


def power(x, exponent):
    x = as_tensor(x)
    p = float(exponent)

    def vjp(g):
        return (g * p * x.data ** (p - 1.0),)

    return record_op("power", x.data ** p, (x,), vjp)


def maximum(a, b):
    """Elementwise maximum; ties send the gradient to ``a``."""
    a, b = _pair_dtype(a, b)
    _broadcast("maximum", a, b)
    pick_a = a.data >= b.data

    def vjp(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return record_op("maximum", np.where(pick_a, a.data, b.data), (a, b), vjp)


def minimum(a, b):
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = _pair_dtype(a, b)
    _broadcast("minimum", a, b)
    pick_a = a.data <= b.data

    def vjp(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return record_op("minimum", np.where(pick_a, a.data, b.data), (a, b), vjp)


def clip(x, low=None, high=None):
    x = as_tensor(x)
    out = np.clip(x.data, low, high)
    inside = np.ones(x.shape, dtype=bool)
    if low is not None:
        inside &= x.data >= low
    if high is not None:
        inside &= x.data <= high
    return record_op("clip", out, (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# unary maps


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return record_op("exp", out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    return record_op("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def abs_(x):
    x = as_tensor(x)
    return record_op("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return record_op("sqrt", out, (x,), lambda g: (0.5 * g / out,))


def sin(x):
    x = as_tensor(x)
    return record_op("sin", np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x):
    x = as_tensor(x)
    return record_op("cos", np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def sigmoid(x):
    x = as_tensor(x)
    out = expit(x.data)
    return record_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def silu(x):
    x = as_tensor(x)
    s = expit(x.data)

    def vjp(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return record_op("silu", x.data * s, (x,), vjp)


def softplus(x):
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data).astype(x.dtype, copy=False)
    return record_op("softplus", out, (x,), lambda g: (g * expit(x.data),))


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record_op("sum", np.asarray(out), (x,), vjp)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return record_op("mean", np.asarray(out), (x,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Matrix product over the last two axes, with leading-axis broadcasting."""
    a, b = _pair_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            # fold leading axes into one product instead of summing a stack
            k, m = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record_op("matmul", out, (a, b), vjp)


def linear(x, weight, bias=None):
    """x[..., C_in] @ weight[C_in, C_out] (+ bias)."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape)) from None
    return record_op("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError("transpose", x.shape, axes, detail="axes must be a permutation")
    inverse = np.argsort(axes)
    return record_op("transpose", x.data.transpose(axes), (x,),
                     lambda g: (g.transpose(inverse),))


def slice_(x, key):
    x = as_tensor(x)
    try:
        out = x.data[key]
    except IndexError:
        raise ShapeError("slice", x.shape, detail=f"bad index {key!r}") from None

    parts = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)

    def vjp(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[key] += g
        else:
            np.add.at(gx, key, g)
        return (gx,)

    return record_op("slice", np.array(out), (x,), vjp)


def take(x, indices, axis=0):
    """Gather along one axis with an integer index array."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    if indices.size and (indices.min() < -x.shape[axis] or indices.max() >= x.shape[axis]):
        raise ShapeError("take", x.shape, indices.shape, detail=f"index out of range on axis {axis}")

    def vjp(g):
        gx = np.zeros_like(x.data)
        index = (slice(None),) * axis + (indices,)
        np.add.at(gx, index, g)
        return (gx,)

    return record_op("take", np.take(x.data, indices, axis=axis), (x,), vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return record_op("concat", out, tensors, vjp)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                for t in tensors]
    return concat(expanded, axis=axis)


def pad(x, pad_width, mode="constant"):
    """
    Pad with zeros ("constant") or by mirroring without the edge ("reflect").

    Parameters:
    x (Tensor): Input
    pad_width (sequence of (before, after)): One pair per axis
    mode (str): "constant", "reflect" or "edge"

    Returns:
    Tensor: Padded tensor
    """
    x = as_tensor(x)
    pad_width = tuple((int(a), int(b)) for a, b in pad_width)
    if len(pad_width) != x.ndim:
        raise ShapeError("pad", x.shape, detail=f"{len(pad_width)} pad pairs for {x.ndim} axes")
    if mode not in ("constant", "reflect", "edge"):
        raise ValueError(f"Unsupported pad mode: {mode}")
    out = np.pad(x.data, pad_width, mode=mode)

    if mode == "constant":
        region = tuple(slice(a, a + n) for (a, _), n in zip(pad_width, x.shape))

        def vjp(g):
            return (g[region].copy(),)
    else:
        # every output cell knows which input cell it copies
        source = np.pad(np.arange(x.size).reshape(x.shape), pad_width, mode=mode)

        def vjp(g):
            flat = np.bincount(source.ravel(), weights=g.ravel(), minlength=x.size)
            return (flat.reshape(x.shape).astype(x.dtype, copy=False),)

    return record_op("pad", out, (x,), vjp)


# ---------------------------------------------------------------------------
# normalisation and convolution


def layer_norm(x, weight=None, bias=None, eps=LAYER_NORM_EPS):
    """Normalise over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centred * inv_std
    out = x_hat
    inputs = [x]
    if weight is not None:
        weight = as_tensor(weight)
        if weight.shape != x.shape[-1:]:
            raise ShapeError("layer_norm", x.shape, weight.shape)
        out = out * weight.data
        inputs.append(weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != x.shape[-1:]:
            raise ShapeError("layer_norm", x.shape, bias.shape)
        out = out + bias.data
        inputs.append(bias)
    reduce_axes = tuple(range(x.ndim - 1))

    def vjp(g):
        g_hat = g * weight.data if weight is not None else g
        gx = inv_std * (g_hat - g_hat.mean(axis=-1, keepdims=True)
                        - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if weight is not None:
            grads.append((g * x_hat).sum(axis=reduce_axes))
        if bias is not None:
            grads.append(g.sum(axis=reduce_axes))
        return tuple(grads)

    return record_op("layer_norm", out, inputs, vjp)


def _pair(value):
    if isinstance(value, (tuple, list)):
        return int(value[0]), int(value[1])
    return int(value), int(value)


def _conv_geometry(op, x_shape, kh, kw, stride, padding):
    h, w = x_shape[:2]
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(op, x_shape, (kh, kw), detail="kernel larger than padded input")
    return sh, sw, ph, pw, ho, wo


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """
    2D cross-correlation on a channels-last map with explicit zero padding.

    Parameters:
    x (Tensor): Input [H, W, C_in]
    weight (Tensor): Kernel [kh, kw, C_in, C_out]
    bias (Tensor): Optional [C_out]
    stride (int or pair): Step between output samples
    padding (int or pair): Zeros added on each side

    Returns:
    Tensor: Output [H_out, W_out, C_out]
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[2] != x.shape[2]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    kh, kw, c_in, c_out = weight.shape
    sh, sw, ph, pw, ho, wo = _conv_geometry("conv2d", x.shape, kh, kw, stride, padding)
    xp = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0)))

    def window(i, j):
        return (slice(i, i + sh * (ho - 1) + 1, sh), slice(j, j + sw * (wo - 1) + 1, sw))

    out = np.zeros((ho, wo, c_out), dtype=np.result_type(x.data, weight.data))
    for i in range(kh):
        for j in range(kw):
            out += xp[window(i, j)] @ weight.data[i, j]
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError("conv2d", weight.shape, bias.shape)
        out += bias.data
        inputs.append(bias)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        g_flat = g.reshape(-1, c_out)
        for i in range(kh):
            for j in range(kw):
                rows, cols = window(i, j)
                gw[i, j] = xp[rows, cols].reshape(-1, c_in).T @ g_flat
                gxp[rows, cols] += g @ weight.data[i, j].T
        grads = [gxp[ph:ph + x.shape[0], pw:pw + x.shape[1]], gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    return record_op("conv2d", out, inputs, vjp)


def depthwise_conv2d(x, weight, bias=None, stride=1, padding=0):
    """Per-channel 2D cross-correlation; weight is [kh, kw, C]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or weight.shape[2] != x.shape[2]:
        raise ShapeError("depthwise_conv2d", x.shape, weight.shape)
    kh, kw, channels = weight.shape
    sh, sw, ph, pw, ho, wo = _conv_geometry("depthwise_conv2d", x.shape, kh, kw, stride, padding)
    xp = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0)))

    def window(i, j):
        return (slice(i, i + sh * (ho - 1) + 1, sh), slice(j, j + sw * (wo - 1) + 1, sw))

    out = np.zeros((ho, wo, channels), dtype=np.result_type(x.data, weight.data))
    for i in range(kh):
        for j in range(kw):
            out += xp[window(i, j)] * weight.data[i, j]
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (channels,):
            raise ShapeError("depthwise_conv2d", weight.shape, bias.shape)
        out += bias.data
        inputs.append(bias)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for i in range(kh):
            for j in range(kw):
                rows, cols = window(i, j)
                gw[i, j] = (xp[rows, cols] * g).sum(axis=(0, 1))
                gxp[rows, cols] += g * weight.data[i, j]
        grads = [gxp[ph:ph + x.shape[0], pw:pw + x.shape[1]], gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    return record_op("depthwise_conv2d", out, inputs, vjp)


def avg_pool2d(x, kernel, stride=None):
    """Mean over kernel x kernel windows of a [H, W, C] map (no padding)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError("avg_pool2d", x.shape, detail="expected [H, W, C]")
    k = int(kernel)
    s = k if stride is None else int(stride)
    _, _, _, _, ho, wo = _conv_geometry("avg_pool2d", x.shape, k, k, s, 0)

    def window(i, j):
        return (slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))

    out = np.zeros((ho, wo, x.shape[2]), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += x.data[window(i, j)]
    out /= k * k

    def vjp(g):
        gx = np.zeros_like(x.data)
        share = g / (k * k)
        for i in range(k):
            for j in range(k):
                gx[window(i, j)] += share
        return (gx,)

    return record_op("avg_pool2d", out, (x,), vjp)
