"""Dense tensors with define-by-run reverse-mode differentiation.

Every operation evaluates eagerly on float64 numpy arrays. When any operand
requires a gradient the result remembers its parents and a backward rule;
:func:`backward` linearizes that graph into a :class:`Tape` and runs the
rules in reverse topological order.

Broadcasting is never implicit. Operands of elementwise ops must have equal
shapes, except that a python number or a one-element tensor acts as a scalar.
Use :func:`expand` when a broadcast is wanted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    """Operand shapes do not conform for an operation."""


class TapeError(RuntimeError):
    """Misuse of the gradient tape (empty tape, repeated backward, ...)."""


class Tensor:
    """An immutable n-dimensional float64 array that may take part in autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "_spent")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"
        self._spent = False

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal fast path: arr is a fresh float64 array owned by the result
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=DTYPE)
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._parents = ()
        t._backward = None
        t._op = "leaf"
        t._spent = False
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)
    __getitem__ = lambda self, index: getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(out: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Wrap a forward result and its backward rule as a graph node.

    ``backward`` receives the output gradient and returns one gradient (or
    ``None``) per parent, each with that parent's shape.
    """
    requires = any(p.requires_grad for p in parents)
    t = Tensor._wrap(out, requires)
    t._op = op
    if requires:
        t._parents = tuple(parents)
        t._backward = backward
    return t


# ---------------------------------------------------------------------------
# tape and backward pass
# ---------------------------------------------------------------------------


@dataclass
class Tape:
    """Recorded operations in topological order (parents before children)."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node._spent:
                raise TapeError(
                    f"backward already ran through {node._op!r}; run the forward pass again"
                )
            if node._backward is None:
                continue
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` of every ``requires_grad`` leaf reachable from ``loss``.

    The graph is consumed: a second call without a new forward pass raises
    :class:`TapeError`. Returns the tape that was executed.
    """
    if loss.size != 1:
        raise TapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    tape = Tape.from_output(loss)
    if not tape.nodes:
        raise TapeError("backward: empty tape (loss does not depend on any requires_grad tensor)")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        parents, rule = node._parents, node._backward
        node._backward = None
        node._parents = ()
        node._spent = True
        if g is None:
            continue
        pgrads = rule(g)
        for p, pg in zip(parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise ShapeError(f"backward of {node._op}: grad shape {pg.shape} != operand shape {p.shape}")
            if p.is_leaf:
                p.grad = pg.astype(DTYPE, copy=True) if p.grad is None else p.grad + pg
            else:
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg
    return tape


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) and not isinstance(x, bool)


def _scalar_like(t: Tensor) -> bool:
    return t.size == 1 and t.ndim <= 1


def _binary_operands(op: str, a, b) -> tuple[Tensor, Tensor]:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape != b.shape and not (_scalar_like(a) or _scalar_like(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no implicit broadcasting)")
    return a, b


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def _out_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    return b.shape if _scalar_like(a) else a.shape


def _scalar_view(a: Tensor, b: Tensor) -> tuple[np.ndarray, np.ndarray]:
    # reduce the scalar-like operand to a 0-d array so numpy never broadcasts a shape
    ad = a.data.reshape(()) if a.shape != b.shape and _scalar_like(a) else a.data
    bd = b.data.reshape(()) if a.shape != b.shape and _scalar_like(b) else b.data
    return ad, bd


def add(a, b) -> Tensor:
    if _is_scalar(b) and isinstance(a, Tensor):
        c = float(b)
        return custom_op(a.data + c, (a,), lambda g: (g,), "add_scalar")
    if _is_scalar(a) and isinstance(b, Tensor):
        return add(b, a)
    a, b = _binary_operands("add", a, b)
    ad, bd = _scalar_view(a, b)
    out = ad + bd
    return custom_op(out, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)), "add")


def neg(a: Tensor) -> Tensor:
    return custom_op(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -float(b))
    if _is_scalar(a):
        return add(neg(b), float(a))
    a, b = _binary_operands("sub", a, b)
    ad, bd = _scalar_view(a, b)
    return custom_op(ad - bd, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)), "sub")


def mul(a, b) -> Tensor:
    if _is_scalar(b) and isinstance(a, Tensor):
        c = float(b)
        return custom_op(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")
    if _is_scalar(a) and isinstance(b, Tensor):
        return mul(b, a)
    a, b = _binary_operands("mul", a, b)
    ad, bd = _scalar_view(a, b)

    def bw(g):
        return _reduce_to(g * bd, a), _reduce_to(g * ad, b)

    return custom_op(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    if _is_scalar(b):
        return mul(a, 1.0 / float(b))
    if _is_scalar(a):
        a = Tensor(float(a))
    a, b = _binary_operands("div", a, b)
    ad, bd = _scalar_view(a, b)
    out = ad / bd

    def bw(g):
        return _reduce_to(g / bd, a), _reduce_to(-g * out / bd, b)

    return custom_op(out, (a, b), bw, "div")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return custom_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return custom_op(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return custom_op(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return custom_op(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return custom_op(xd * cdf, (x,), bw, "gelu")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return custom_op(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for rank {ndim}")
        out.append(a % ndim)
    return tuple(sorted(out))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return custom_op(out, (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(tsum(x, axes, keepdims), 1.0 / count)


def var(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance."""
    axes = _norm_axes(axis, x.ndim)
    m = mean(x, axes, keepdims=True)
    d = x - expand(m, x.shape)
    return mean(d * d, axes, keepdims)


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast of ``x`` to ``shape``."""
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise ShapeError(f"expand: cannot broadcast {x.shape} to {shape}") from exc
    lead = len(shape) - x.ndim
    src = x.shape

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, s in enumerate(src) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return custom_op(out.copy(), (x,), bw, "expand")


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands, or batched 3-D operands with equal batch extent."""
    a, b = as_tensor(a), as_tensor(b)
    ok = (
        a.ndim == b.ndim
        and a.ndim in (2, 3)
        and a.shape[-1] == b.shape[-2]
        and (a.ndim == 2 or a.shape[0] == b.shape[0])
    )
    if not ok:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return custom_op(ad @ bd, (a, b), bw, "matmul")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return custom_op(
        np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),), "transpose"
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size or any(s <= 0 for s in shape):
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}")
    src = x.shape
    return custom_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat: no operands")
    ndim = xs[0].ndim
    axis = axis % ndim
    for x in xs[1:]:
        if x.ndim != ndim or any(
            x.shape[d] != xs[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise ShapeError(f"concat: shapes {xs[0].shape} and {x.shape} do not conform on axis {axis}")
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return custom_op(np.concatenate([x.data for x in xs], axis=axis), xs, bw, "concat")


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice / integer) indexing; advanced indexing is rejected."""
    idx = index if isinstance(index, tuple) else (index,)
    for i in idx:
        if not (isinstance(i, (slice, int, np.integer)) or i is Ellipsis):
            raise ShapeError(f"getitem: unsupported index {i!r} (basic slicing only)")
    out = x.data[index]
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return custom_op(np.array(out, dtype=DTYPE), (x,), bw, "getitem")


# ---------------------------------------------------------------------------
# spatial primitives
# ---------------------------------------------------------------------------


def conv_out_extent(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"conv2d: extent {n} with kernel {k}, stride {stride}, pad {pad} gives non-integral output"
        )
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded cross-correlation of a ``C_in x h x w`` map with ``C_out x C_in x k x k`` kernels."""
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0] or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} and kernels {w.shape} do not conform")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {w.shape[0]} output channels")
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    ho = conv_out_extent(h, k, stride, pad)
    wo = conv_out_extent(wd, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    if k == 1:
        cols = xp[:, ::stride, ::stride].reshape(c_in, ho * wo).T
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        win = win[:, ::stride, ::stride]
        cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c_in * k * k)
    wmat = w.data.reshape(c_out, c_in * k * k)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = np.ascontiguousarray(out.T).reshape(c_out, ho, wo)

    def bw(g):
        g2 = g.reshape(c_out, ho * wo)
        gw = (g2 @ cols).reshape(w.shape)
        gb = g2.sum(axis=1) if b is not None else None
        gx = None
        if x.requires_grad:
            gcols = (g2.T @ wmat).reshape(ho, wo, c_in, k, k)
            gxp = np.zeros(xp.shape, dtype=DTYPE)
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                        :, :, :, i, j
                    ].transpose(2, 0, 1)
            gx = gxp[:, pad : pad + h, pad : pad + wd] if pad else gxp
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return custom_op(out, parents, bw, "conv2d")


def pad_edge(x: Tensor, pad: int) -> Tensor:
    """Replicate-pad the two trailing (spatial) axes of a ``C x h x w`` map."""
    if x.ndim != 3:
        raise ShapeError(f"pad_edge: expected C x h x w, got {x.shape}")
    if pad == 0:
        return x
    h, w = x.shape[1:]

    def bw(g):
        rows = g[:, pad : pad + h, :].copy()
        rows[:, 0, :] += g[:, :pad, :].sum(axis=1)
        rows[:, -1, :] += g[:, pad + h :, :].sum(axis=1)
        out = rows[:, :, pad : pad + w].copy()
        out[:, :, 0] += rows[:, :, :pad].sum(axis=2)
        out[:, :, -1] += rows[:, :, pad + w :].sum(axis=2)
        return (out,)

    return custom_op(np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)), mode="edge"), (x,), bw, "pad_edge")


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic ``n_out x n_in`` linear-interpolation matrix (half-pixel centers)."""
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def resize_bilinear(x: Tensor, h_out: int, w_out: int) -> Tensor:
    """Bilinear resize of a ``C x h x w`` map (align_corners=False convention)."""
    if x.ndim != 3:
        raise ShapeError(f"resize_bilinear: expected C x h x w, got {x.shape}")
    ry = interp_matrix(x.shape[1], h_out)
    rx = interp_matrix(x.shape[2], w_out)
    out = ry @ x.data @ rx.T
    return custom_op(out, (x,), lambda g: (ry.T @ g @ rx,), "resize_bilinear")


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    worst_index: tuple[int, ...] | None
    analytic: float
    numeric: float
    checked: int
    size: int


@dataclass
class GradCheckReport:
    entries: list[ParamCheck]

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_err < tol

    def worst(self, k: int = 10) -> list[ParamCheck]:
        return sorted(self.entries, key=lambda e: -e.max_rel_err)[:k]

    def format(self, k: int | None = None) -> str:
        rows = self.entries if k is None else self.worst(k)
        lines = [f"{'parameter':<48} {'max_rel_err':>12} {'checked':>9}"]
        for e in rows:
            lines.append(f"{e.name:<48} {e.max_rel_err:12.3e} {e.checked:>4}/{e.size:<5}")
        lines.append(f"overall max rel err: {self.max_rel_err:.3e}")
        return "\n".join(lines)


def grad_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``backward`` gradients of ``f`` with central finite differences.

    ``f`` maps a dict of named tensors to a scalar tensor. Values are promoted
    to float64. With ``max_entries`` set, tensors larger than that are probed
    at a seeded random subset of coordinates plus one random direction
    spanning every coordinate; otherwise every coordinate is probed.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    base = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}

    def evaluate(values: Mapping[str, np.ndarray]) -> float:
        out = f({k: Tensor._wrap(v.view(), False) for k, v in values.items()})
        val = out.item()
        if not math.isfinite(val):
            raise FloatingPointError(f"grad_check: f returned non-finite value {val}")
        return val

    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in base.items()}
    loss = f(leaves)
    if not math.isfinite(loss.item()):
        raise FloatingPointError(f"grad_check: f returned non-finite value {loss.item()}")
    if loss.requires_grad:
        backward(loss)
    analytic = {
        k: (t.grad if t.grad is not None else np.zeros_like(base[k])) for k, t in leaves.items()
    }

    rng = np.random.default_rng(seed)
    entries = []
    for name, value in base.items():
        flat = value.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            picks = np.arange(flat.size)
        else:
            picks = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = (0.0, None, 0.0, 0.0)
        g_flat = analytic[name].reshape(-1)
        for j in picks:
            orig = flat[j]
            flat[j] = orig + eps
            fp = evaluate(base)
            flat[j] = orig - eps
            fm = evaluate(base)
            flat[j] = orig
            num = (fp - fm) / (2.0 * eps)
            err = float(relative_error(g_flat[j], num))
            if err >= worst[0]:
                worst = (err, np.unravel_index(j, value.shape), float(g_flat[j]), num)
        checked = len(picks)
        if checked < flat.size:
            d = rng.standard_normal(flat.size)
            d /= np.linalg.norm(d)
            orig = flat.copy()
            flat[:] = orig + eps * d
            fp = evaluate(base)
            flat[:] = orig - eps * d
            fm = evaluate(base)
            flat[:] = orig
            num = (fp - fm) / (2.0 * eps)
            ana = float(g_flat @ d)
            err = float(relative_error(ana, num))
            if err >= worst[0]:
                worst = (err, None, ana, num)
        entries.append(
            ParamCheck(name, worst[0], worst[1], worst[2], worst[3], checked, flat.size)
        )
    return GradCheckReport(entries)


def leaves_from(params: Mapping[str, np.ndarray], requires_grad: bool = True) -> dict[str, Tensor]:
    """Fresh leaf tensors (float64 copies) for a named parameter set."""
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


def zip_grads(leaves: Mapping[str, Tensor], names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    names = leaves.keys() if names is None else names
    return {k: leaves[k].grad for k in names if leaves[k].grad is not None}
