"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays; every differentiable operation records a node holding
its inputs and an adjoint closure. ``Tensor.backward`` walks the recorded graph
in reverse topological order and accumulates gradients into leaf tensors.

Broadcasting follows one rule: shapes are aligned on their trailing axes, a
missing leading axis is treated as extent 1, and an axis may only differ when
one of the two extents is 1. Anything else raises ``ShapeError``.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

WIDE = np.float64
STANDARD = np.float32

PRECISIONS = {"wide": WIDE, "standard": STANDARD}

# GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715

DIFFERENTIABLE_OPS = (
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sigmoid",
    "gelu",
    "exp",
    "log",
    "square",
    "abs",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "getitem",
    "concat",
    "matmul",
    "conv2d",
    "conv_transpose2d",
    "softmax",
    "layer_norm",
    "adaptive_avg_pool",
)


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


_state = {"grad": True, "flops": None}


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextlib.contextmanager
def count_flops():
    """Count multiply-accumulates of conv/matmul ops executed inside the block.

    Yields a one-element list whose entry holds the running total.
    """
    prev = _state["flops"]
    box = [0]
    _state["flops"] = box
    try:
        yield box
    finally:
        _state["flops"] = prev


def _add_flops(n: int) -> None:
    box = _state["flops"]
    if box is not None:
        box[0] += int(n)


class Node:
    """One operation record in the autodiff graph."""

    __slots__ = ("op", "inputs", "adjoint")

    def __init__(self, op: str, inputs: tuple, adjoint: Callable):
        self.op = op
        self.inputs = inputs
        self.adjoint = adjoint


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (WIDE, STANDARD) else WIDE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.node: Node | None = None
        self.name = name

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{rg})"

    def __len__(self) -> int:
        return self.shape[0]

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.dtype)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    # -- autodiff -----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires-grad leaf."""
        if self.data.size != 1:
            raise ValueError(
                f"backward needs a single-element loss, got shape {self.shape}; reduce it first (e.g. .sum())"
            )
        if not self.requires_grad:
            return
        order = _topological(self)
        grads = {id(self): np.ones_like(self.data)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.node is None:
                t.grad += g
                continue
            in_grads = t.node.adjoint(g)
            for inp, ig in zip(t.node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig

    # -- operator sugar ----------------------------------------------------

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def tensor_new(shape: Sequence[int], data: Iterable[float], requires_grad: bool = False, precision: str = "wide") -> Tensor:
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"extents must be >= 1, got {shape}")
    flat = np.asarray(list(data) if not isinstance(data, np.ndarray) else data, dtype=PRECISIONS[precision]).reshape(-1)
    expected = int(np.prod(shape)) if shape else 1
    if flat.size != expected:
        raise ShapeError(f"length mismatch {flat.size} vs {expected}")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype or WIDE)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


def _make(op: str, data: np.ndarray, inputs: tuple, adjoint: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.node = None
    out.requires_grad = False
    if _state["grad"] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, adjoint)
    return out


# -- broadcasting ------------------------------------------------------------

def broadcast_shape(a: tuple, b: tuple) -> tuple:
    n = max(len(a), len(b))
    pa = (1,) * (n - len(a)) + tuple(a)
    pb = (1,) * (n - len(b)) + tuple(b)
    out = []
    for x, y in zip(pa, pb):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"cannot broadcast shapes {tuple(a)} and {tuple(b)}")
    return tuple(out)


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    a = a if isinstance(a, Tensor) else None if a is None else Tensor(np.asarray(a, dtype=b.dtype if isinstance(b, Tensor) else WIDE))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    broadcast_shape(a.shape, b.shape)
    return a, b


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _make(
        "mul", ad * bd, (a, b),
        lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        "div", out, (a, b),
        lambda g: (unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def gelu(a: Tensor) -> Tensor:
    x = a.data
    u = GELU_C * (x + GELU_A * x ** 3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def adjoint(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _make("gelu", out, (a,), adjoint)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make("log", np.log(x), (a,), lambda g: (g / x,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make("square", x * x, (a,), lambda g: (2.0 * g * x,))


def tabs(a: Tensor) -> Tensor:
    x = a.data
    return _make("abs", np.abs(x), (a,), lambda g: (g * np.sign(x),))


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "sigmoid": sigmoid,
    "gelu": gelu,
    "exp": exp,
    "log": log,
    "square": square,
    "abs": tabs,
}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    if op not in ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op!r}")
    fn = ELEMENTWISE[op]
    if op in ("add", "sub", "mul", "div"):
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return fn(a, b)
    return fn(a)


# -- reductions and shape ops --------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise IndexError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(out)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def adjoint(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(out), (a,), adjoint)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    n = int(np.prod([shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def adjoint(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make("mean", np.asarray(out), (a,), adjoint)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, index) -> Tensor:
    """Basic and integer-array indexing; repeated indices accumulate in the adjoint."""
    shape, dtype = a.shape, a.dtype
    out = a.data[index]
    basic = not _has_array(index)

    def adjoint(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make("getitem", np.array(out, copy=basic), (a,), adjoint)


def _has_array(index) -> bool:
    if not isinstance(index, tuple):
        index = (index,)
    return any(isinstance(i, (np.ndarray, list)) for i in index)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def split(a: Tensor, parts: int, axis: int = 0) -> list:
    n = a.shape[axis]
    if n % parts:
        raise ShapeError(f"cannot split extent {n} into {parts} equal parts")
    step = n // parts
    idx = [slice(None)] * a.ndim
    out = []
    for i in range(parts):
        idx[axis] = slice(i * step, (i + 1) * step)
        out.append(getitem(a, tuple(idx)))
    return out


# -- linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast as batches."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >= 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    batch = broadcast_shape(a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data
    out = ad @ bd
    _add_flops(int(np.prod(batch)) * a.shape[-2] * a.shape[-1] * b.shape[-1])

    def adjoint(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return _make("matmul", out, (a, b), adjoint)


def conv_output_extent(n: int, k: int, stride: int, padding: int) -> int:
    """floor((n + 2 padding - k) / stride) + 1; trailing rows that do not fill a stride are dropped."""
    span = n + 2 * padding - k
    if span < 0 or stride < 1:
        raise ConfigError(
            f"kernel {k} with padding {padding} does not fit extent {n} (stride {stride})"
        )
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-d cross-correlation with zero padding on a C x H x W input.

    ``weight`` has shape (C_out, C_in / groups, k, k).
    """
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be C x H x W, got {x.shape}")
    cin, h, w = x.shape
    cout, cg, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"square kernels only, got {weight.shape}")
    if cin % groups or cout % groups:
        raise ConfigError(f"channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cg != cin // groups:
        raise ShapeError(f"weight expects {cg * groups} input channels, input has {cin}")
    ho = conv_output_extent(h, k, stride, padding)
    wo = conv_output_extent(w, k, stride, padding)
    og = cout // groups

    xd = x.data
    if padding:
        xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xd
    if k == 1:
        cols = xp[:, ::stride, ::stride][:, :ho, :wo].reshape(groups, cg, ho * wo)
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        win = win[:, ::stride, ::stride][:, :ho, :wo]
        # (C, ho, wo, k, k) -> (G, cg*k*k, ho*wo)
        cols = win.reshape(groups, cg, ho, wo, k, k).transpose(0, 1, 4, 5, 2, 3).reshape(groups, cg * k * k, ho * wo)
    wmat = weight.data.reshape(groups, og, cg * k * k)
    out = (wmat @ cols).reshape(cout, ho, wo)
    if bias is not None:
        out = out + bias.data[:, None, None]
    _add_flops(cout * ho * wo * cg * k * k)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    wd = weight.data

    def adjoint(g):
        gm = g.reshape(groups, og, ho * wo)
        gw = (gm @ np.swapaxes(cols, 1, 2)).reshape(wd.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.swapaxes(wmat, 1, 2) @ gm
            if k == 1:
                gxp = np.zeros_like(xp)
                gxp[:, : ho * stride : stride, : wo * stride : stride] = gcols.reshape(cin, ho, wo)
            else:
                gcols = gcols.reshape(cin, k, k, ho, wo)
                gxp = np.zeros_like(xp)
                for u in range(k):
                    for v in range(k):
                        gxp[:, u : u + stride * ho : stride, v : v + stride * wo : stride] += gcols[:, u, v]
            gx = gxp[:, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    return _make("conv2d", out, inputs, adjoint)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Transposed convolution with stride equal to the kernel size (no overlap).

    ``weight`` has shape (C_in, C_out, k, k); output is C_out x kH x kW.
    """
    cin, h, w = x.shape
    wcin, cout, k, _ = weight.shape
    if wcin != cin:
        raise ShapeError(f"weight expects {wcin} input channels, input has {cin}")
    xd, wd = x.data, weight.data
    t = np.tensordot(wd, xd, axes=([0], [0]))  # (cout, k, k, h, w)
    out = t.transpose(0, 3, 1, 4, 2).reshape(cout, h * k, w * k)
    if bias is not None:
        out = out + bias.data[:, None, None]
    _add_flops(cin * cout * k * k * h * w)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def adjoint(g):
        g5 = g.reshape(cout, h, k, w, k).transpose(0, 2, 4, 1, 3)  # (cout, k, k, h, w)
        gx = np.tensordot(wd, g5, axes=([1, 2, 3], [0, 1, 2]))
        gw = np.tensordot(xd, g5, axes=([1, 2], [3, 4]))
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    return _make("conv_transpose2d", out, inputs, adjoint)


# -- normalisation and pooling -----------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    (ax,) = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=ax, keepdims=True)
    return _make("softmax", out, (x,), lambda g: (out * (g - (g * out).sum(axis=ax, keepdims=True)),))


def layer_norm(x: Tensor, gamma: Tensor, beta_ln: Tensor, axis: int = 0, eps: float = 1e-5) -> Tensor:
    """Normalise each slice along ``axis`` to zero mean and unit variance, then apply the affine pair."""
    (ax,) = _norm_axis(axis, x.ndim)
    n = x.shape[ax]
    if n == 0:
        raise ShapeError("layer_norm over a zero-length axis")
    if gamma.shape != (n,) or beta_ln.shape != (n,):
        raise ShapeError(f"gamma/beta must have shape ({n},), got {gamma.shape} and {beta_ln.shape}")
    bshape = [1] * x.ndim
    bshape[ax] = n
    gd = gamma.data.reshape(bshape)
    xd = x.data
    mu = xd.mean(axis=ax, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gd + beta_ln.data.reshape(bshape)
    others = tuple(i for i in range(x.ndim) if i != ax)

    def adjoint(g):
        dxhat = g * gd
        gx = inv / n * (n * dxhat - dxhat.sum(axis=ax, keepdims=True) - xhat * (dxhat * xhat).sum(axis=ax, keepdims=True))
        ggamma = (g * xhat).sum(axis=others).reshape(n)
        gbeta = g.sum(axis=others).reshape(n)
        return gx, ggamma, gbeta

    return _make("layer_norm", out, (x, gamma, beta_ln), adjoint)


def adaptive_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: C x H x W -> C."""
    if x.ndim != 3:
        raise ShapeError(f"adaptive_avg_pool expects C x H x W, got {x.shape}")
    c, h, w = x.shape
    out = x.data.mean(axis=(1, 2))
    return _make(
        "adaptive_avg_pool", out, (x,),
        lambda g: (np.broadcast_to(g[:, None, None] / (h * w), (c, h, w)).copy(),),
    )


# -- finite-difference checking -------------------------------------------------------

def grad_check(func: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-6) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |central difference|)."""
    xd = x.data
    leaf = Tensor(xd.copy(), requires_grad=True)
    loss = func(leaf)
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite loss at the unperturbed point")
    loss.backward()
    analytic = leaf.grad.reshape(-1)
    base = xd.astype(WIDE).reshape(-1)
    worst = 0.0
    with no_grad():
        for i in range(base.size):
            probe = base.copy()
            probe[i] += step
            fp = float(func(Tensor(probe.reshape(xd.shape), dtype=xd.dtype)).data.sum())
            probe[i] -= 2 * step
            fm = float(func(Tensor(probe.reshape(xd.shape), dtype=xd.dtype)).data.sum())
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise FloatingPointError(f"non-finite value when perturbing coordinate {i}")
            fd = (fp - fm) / (2 * step)
            err = abs(float(analytic[i]) - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst
