"""Dense float64 tensors with reverse-mode differentiation.

The graph is a Wengert list: while a :class:`Tape` is active (see
:func:`record`), every op appends its output node in execution order.
Replaying the list backwards propagates vector-Jacobian products, so no
explicit topological sort is needed. The tape is cleared after the
backward pass; leaf gradients survive on the tensors themselves.

All buffers are contiguous, row-major float64. There is no broadcasting
beyond what the ops below define, and no view semantics: every op
produces a fresh buffer.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand dimensions do not conform."""


class Tensor:
    """A dense float64 array, optionally tracked for gradients.

    ``grad`` is populated (same shape as ``data``) by ``Tape.backward`` for
    every tensor with ``requires_grad`` that participated in the pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    # Ergonomic arithmetic; scalars on either side are allowed, tensors
    # must match shapes exactly.
    def __add__(self, other):
        return add_scalar(self, other) if _is_number(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_scalar(self, -other) if _is_number(other) else sub(self, other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)

    def __mul__(self, other):
        return scale(self, other) if _is_number(other) else mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if _is_number(other):
            return scale(self, 1.0 / other)
        return mul(self, reciprocal(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _is_number(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating))


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


class Tape:
    """Ordered record of one forward pass.

    Execution order is a topological order of the graph, so the reversed
    list is a valid backward schedule.
    """

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, root: Tensor) -> None:
        """Propagate d(root)/d(leaf) into ``grad`` of every tracked tensor.

        ``root`` must be a scalar recorded on this tape. The tape is
        cleared afterwards; rebuild it with a new forward pass before
        differentiating again.
        """
        if root.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        root.grad = np.ones_like(root.data)
        for node in reversed(self._nodes):
            if node.grad is not None and node._backward is not None:
                node._backward()
        # Contract: every requires_grad tensor touched by the pass ends up
        # with a grad buffer, including dead branches.
        for node in self._nodes:
            for t in (node, *node._parents):
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)
        self.clear()

    def clear(self) -> None:
        for node in self._nodes:
            node._backward = None
            node._parents = ()
        self._nodes.clear()


_ACTIVE: Tape | None = None


@contextmanager
def record() -> Iterator[Tape]:
    """Activate a fresh tape for the duration of the block (single-threaded)."""
    global _ACTIVE
    if _ACTIVE is not None:
        raise RuntimeError("a tape is already recording; nested tapes are not supported")
    tape = Tape()
    _ACTIVE = tape
    try:
        yield tape
    finally:
        _ACTIVE = None


def _track(out: Tensor, parents: tuple[Tensor, ...], backward: Callable[[], None]) -> Tensor:
    if _ACTIVE is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        _ACTIVE._nodes.append(out)
    return out


# ---------------------------------------------------------------------------
# Elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data + b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _track(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data - b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _track(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data * b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _track(out, (a, b), backward)


def scale(a: Tensor, s) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * s)

    return _track(out, (a,), backward)


def add_scalar(a: Tensor, s) -> Tensor:
    out = Tensor(a.data + float(s))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad)

    return _track(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * (a.data > 0.0))

    return _track(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    """Natural log; domain x > 0."""
    out = Tensor(np.log(a.data))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad / a.data)

    return _track(out, (a,), backward)


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * 2.0 * a.data)

    return _track(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; domain x > 0 for differentiation."""
    out = Tensor(np.sqrt(a.data))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * 0.5 / out.data)

    return _track(out, (a,), backward)


def reciprocal(a: Tensor) -> Tensor:
    """Elementwise 1/x; domain x != 0."""
    out = Tensor(1.0 / a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(-out.grad * out.data * out.data)

    return _track(out, (a,), backward)


def powc(a: Tensor, exponent: float) -> Tensor:
    """Elementwise x**c for a constant c; domain x >= 0 when c is not an integer."""
    e = float(exponent)
    out = Tensor(np.power(a.data, e))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * e * np.power(a.data, e - 1.0))

    return _track(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    """Elementwise logistic function, overflow-free on both tails."""
    z = np.exp(-np.abs(a.data))
    out = Tensor(np.where(a.data >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z)))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * out.data * (1.0 - out.data))

    return _track(out, (a,), backward)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))

    def backward():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))

    return _track(out, (a,), backward)


def mean(a: Tensor) -> Tensor:
    return scale(tsum(a), 1.0 / a.data.size)


def add_rowvec(a: Tensor, b: Tensor) -> Tensor:
    """Add a length-k vector to every row of an (n, k) matrix."""
    if a.data.ndim != 2 or b.data.ndim != 1 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"add_rowvec: shapes {a.shape} and {b.shape} do not conform")
    out = Tensor(a.data + b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _track(out, (a, b), backward)


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    out = Tensor(a.data.reshape(shape))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.reshape(a.shape))

    return _track(out, (a,), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    out = Tensor(np.ascontiguousarray(a.data.T))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.T)

    return _track(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    out = Tensor(np.concatenate([t.data for t in parts], axis=axis))
    sizes = [t.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _track(out, tuple(parts), backward)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a matrix; backward scatter-adds into the source rows."""
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.data[idx])

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            a._accumulate(g)

    return _track(out, (a,), backward)


def upsample_nearest2x(a: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of a (C, H, W) tensor."""
    if a.data.ndim != 3:
        raise ShapeError(f"upsample_nearest2x expects (C, H, W), got shape {a.shape}")
    out = Tensor(np.repeat(np.repeat(a.data, 2, axis=1), 2, axis=2))
    c, h, w = a.shape

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    return _track(out, (a,), backward)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = Tensor(a.data @ b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _track(out, (a, b), backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a matrix, stabilised by row-max subtraction."""
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=1, keepdims=True))

    def backward():
        if a.requires_grad:
            g = out.grad
            y = out.data
            a._accumulate(y * (g - np.sum(g * y, axis=1, keepdims=True)))

    return _track(out, (a,), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution of a (C_in, H, W) input with (C_out, C_in, kh, kw) filters."""
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d expects (C, H, W) input, got shape {x.shape}")
    if w.data.ndim != 4 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d: input {x.shape} does not match filters {w.shape}")
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    s, p = int(stride), int(padding)
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1

    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::s, ::s]
    # (ho*wo, c_in*kh*kw) patch matrix; kept for the filter gradient.
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, c_in * kh * kw)
    wf = w.data.reshape(c_out, -1)
    y = cols @ wf.T
    if b is not None:
        y = y + b.data
    out = Tensor(np.ascontiguousarray(y.T).reshape(c_out, ho, wo))

    def backward():
        g = out.grad
        gf = g.reshape(c_out, ho * wo).T
        if w.requires_grad:
            w._accumulate((gf.T @ cols).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(1, 2)))
        if x.requires_grad:
            dcols = gf @ wf
            dwin = dcols.reshape(ho, wo, c_in, kh, kw).transpose(2, 0, 1, 3, 4)
            dxp = np.zeros((c_in, h + 2 * p, wd + 2 * p))
            # col2im as kh*kw strided slice-adds instead of per-element scatter.
            for ky in range(kh):
                for kx in range(kw):
                    dxp[:, ky:ky + s * ho:s, kx:kx + s * wo:s] += dwin[:, :, :, ky, kx]
            x._accumulate(dxp[:, p:p + h, p:p + wd] if p else dxp)

    parents = (x, w) if b is None else (x, w, b)
    return _track(out, parents, backward)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def gradcheck(f: Callable[..., Tensor], *inputs: Tensor, step: float = 1e-5) -> float:
    """Max relative error between tape gradients and central finite differences.

    ``f`` must return a scalar tensor and be deterministic. Every input is
    marked ``requires_grad``; the relative error of an element pair (a, b)
    is |a - b| / max(1, |a|, |b|), so near-zero gradients are compared
    absolutely.
    """
    for inp in inputs:
        inp.requires_grad = True
        inp.grad = None
    with record() as tape:
        out = f(*inputs)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("gradcheck needs a scalar-valued computation")
    tape.backward(out)
    # an input the computation never touched legitimately has no grad buffer
    analytic = [np.zeros_like(inp.data) if inp.grad is None else np.array(inp.grad)
                for inp in inputs]

    worst = 0.0
    for inp, ga in zip(inputs, analytic):
        flat = inp.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(*inputs).item()
            flat[i] = orig - step
            lo = f(*inputs).item()
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * step)
        ga_flat = ga.reshape(-1)
        denom = np.maximum(1.0, np.maximum(np.abs(ga_flat), np.abs(fd)))
        err = np.max(np.abs(ga_flat - fd) / denom) if flat.size else 0.0
        worst = max(worst, float(err))
    return worst
