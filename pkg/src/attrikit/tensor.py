"""Reverse-mode automatic differentiation on dense float64 numpy arrays.

A Tensor owns a contiguous row-major float64 buffer and, after a backward
pass, a gradient buffer of the same shape. Operations executed while a Tape
is active append nodes in execution order, so the node list is already
topologically sorted; backward walks it once in reverse.

Deliberate limits: float64 only, no broadcasting beyond scalar-tensor, no
views or strides (every op returns a fresh contiguous copy), no higher-order
derivatives. ReLU's subgradient at exactly 0 is 0.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

Number = Union[int, float, np.integer, np.floating]


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity entered or left an operation."""


class TapeError(RuntimeError):
    """Tape misuse: backward twice, non-scalar loss, loss not on a tape."""


def _check_finite(arr: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{context}: non-finite value encountered")


class Tensor:
    """Dense float64 value with an optional gradient buffer.

    ``data`` is always a private contiguous copy of whatever was passed in;
    mutating the source array afterwards does not affect the tensor. ``grad``
    stays None until a backward pass deposits into it. Gradients accumulate
    across backward passes; callers that want fresh gradients zero them
    (see ``zero_grad``).
    """

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C")
        _check_finite(arr, "tensor construction")
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._tape: Optional["Tape"] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, context: str) -> "Tensor":
        # Internal fast path: arr is a freshly computed array the caller owns.
        # ascontiguousarray would promote 0-d scalars to 1-d, so stay manual.
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.array(arr, dtype=np.float64, order="C")
        _check_finite(arr, context)
        out.data = arr
        out.grad = None
        out.requires_grad = False
        out._tape = None
        return out

    # ---- introspection ----
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Copy of the underlying array (the buffer itself stays private)."""
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ---- operator sugar ----
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

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            if other.size != 1:
                raise ShapeError("div: only division by a scalar is supported")
            other = other.item()
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def softmax(self):
        return softmax(self)

    def log_softmax(self):
        return log_softmax(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def gather(self, index: int):
        return gather(self, index)


@dataclass
class Node:
    """One recorded operation: operands, output, and the local backward rule."""

    op: str
    parents: tuple
    out: Tensor
    backward: Callable[[np.ndarray], None]


class Tape:
    """Ordered record of operations for one reverse pass.

    Nodes are appended in execution order, which makes the list topologically
    sorted by construction. A tape is single threaded and consumed by its one
    allowed backward call. ``nodes_recorded_total`` is a process-wide counter
    used by tests to prove that untracked evaluation allocates nothing.
    """

    nodes_recorded_total: int = 0

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def _append(self, node: Node) -> None:
        self.nodes.append(node)
        Tape.nodes_recorded_total += 1

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every tensor the scalar ``loss`` depends on."""
        if self.consumed:
            raise TapeError("backward called twice on the same tape")
        if not isinstance(loss, Tensor):
            raise TapeError("backward expects a Tensor loss")
        if loss.size != 1:
            raise TapeError(f"backward expects a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not produced on this tape")
        self.consumed = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue  # node feeds a branch the loss never touched
            node.backward(g)


_LOCAL = threading.local()


def _stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def tape():
    """Context manager that makes a fresh private Tape active on this thread."""
    t = Tape()
    _stack().append(t)
    try:
        yield t
    finally:
        _stack().pop()


@contextmanager
def no_grad():
    """Suspend recording, even inside an enclosing tape() block."""
    _stack().append(None)
    try:
        yield
    finally:
        _stack().pop()


def no_grad_eval(fn: Callable, *args):
    """Run fn without recording anything; outputs are bitwise-identical."""
    with no_grad():
        return fn(*args)


def backward(loss: Tensor) -> None:
    """Reverse pass from a scalar loss through the tape that recorded it."""
    if loss._tape is None:
        raise TapeError("loss was not recorded on any tape")
    loss._tape.backward(loss)


def value_and_grad(fn: Callable[[Tensor], Tensor], x: np.ndarray) -> tuple[float, np.ndarray]:
    """Scalar value of fn at x and d(fn)/dx, on a private tape.

    fn maps a Tensor to a scalar Tensor. If fn's output turns out not to
    depend on x at all the gradient is a zero array.
    """
    xt = Tensor(x, requires_grad=True)
    with tape() as t:
        out = fn(xt)
    if not isinstance(out, Tensor) or out.size != 1:
        raise TapeError("value_and_grad expects fn to return a scalar Tensor")
    if out._tape is not t:
        # constant with respect to everything tracked
        return float(out.data.reshape(())), np.zeros_like(xt.data)
    t.backward(out)
    g = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
    return float(out.data.reshape(())), g


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _record(out: Tensor, parents: tuple, op: str, backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    t = _active_tape()
    if t is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = t
        t._append(Node(op, parents, out, backward_fn))
    return out


def _coerce(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _binary_check(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} do not conform")


def _fit(g: np.ndarray, shape: tuple) -> np.ndarray:
    # collapse the gradient of a scalar operand that was broadcast
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


# ---- elementwise arithmetic ----

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_check("add", a, b)
    out = Tensor._wrap(a.data + b.data, "add")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _fit(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _fit(g, b.data.shape))

    return _record(out, (a, b), "add", backward_fn)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_check("sub", a, b)
    out = Tensor._wrap(a.data - b.data, "sub")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _fit(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _fit(-g, b.data.shape))

    return _record(out, (a, b), "sub", backward_fn)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_check("mul", a, b)
    out = Tensor._wrap(a.data * b.data, "mul")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _fit(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _fit(g * a.data, b.data.shape))

    return _record(out, (a, b), "mul", backward_fn)


def neg(a) -> Tensor:
    a = _coerce(a)
    out = Tensor._wrap(-a.data, "neg")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, -g)

    return _record(out, (a,), "neg", backward_fn)


# ---- matmul ----

def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands: (m,n)@(n,k), (m,n)@(n,), (n,)@(n,k)."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: operands must be 1-D or 2-D, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: operand shapes {a.shape} and {b.shape} do not conform")
    out = Tensor._wrap(a.data @ b.data, "matmul")

    def backward_fn(g):
        if a.ndim == 2 and b.ndim == 2:
            if a.requires_grad:
                _accumulate(a, g @ b.data.T)
            if b.requires_grad:
                _accumulate(b, a.data.T @ g)
        elif a.ndim == 2 and b.ndim == 1:
            if a.requires_grad:
                _accumulate(a, np.outer(g, b.data))
            if b.requires_grad:
                _accumulate(b, a.data.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            if a.requires_grad:
                _accumulate(a, b.data @ g)
            if b.requires_grad:
                _accumulate(b, np.outer(a.data, g))
        else:  # 1-D @ 1-D -> scalar
            if a.requires_grad:
                _accumulate(a, g * b.data)
            if b.requires_grad:
                _accumulate(b, g * a.data)

    return _record(out, (a, b), "matmul", backward_fn)


# ---- activations ----

def relu(a) -> Tensor:
    a = _coerce(a)
    out = Tensor._wrap(np.maximum(a.data, 0.0), "relu")
    mask = a.data > 0.0  # strict: subgradient at 0 is 0

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g * mask)

    return _record(out, (a,), "relu", backward_fn)


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    x = a.data
    s = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor._wrap(s, "sigmoid")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g * s * (1.0 - s))

    return _record(out, (a,), "sigmoid", backward_fn)


def softmax(a) -> Tensor:
    """Softmax over the last axis; backward is the Jacobian-vector product."""
    a = _coerce(a)
    if a.ndim not in (1, 2):
        raise ShapeError(f"softmax: expected 1-D or 2-D input, got {a.shape}")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor._wrap(s, "softmax")

    def backward_fn(g):
        if a.requires_grad:
            # JVP form: s * (g - <g, s>) without materializing the Jacobian
            inner = (g * s).sum(axis=-1, keepdims=True)
            _accumulate(a, s * (g - inner))

    return _record(out, (a,), "softmax", backward_fn)


def log_softmax(a) -> Tensor:
    a = _coerce(a)
    if a.ndim not in (1, 2):
        raise ShapeError(f"log_softmax: expected 1-D or 2-D input, got {a.shape}")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ls = z - lse
    out = Tensor._wrap(ls, "log_softmax")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g - np.exp(ls) * g.sum(axis=-1, keepdims=True))

    return _record(out, (a,), "log_softmax", backward_fn)


def log(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0.0):
        raise NonFiniteError("log: input must be strictly positive")
    out = Tensor._wrap(np.log(a.data), "log")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g / a.data)

    return _record(out, (a,), "log", backward_fn)


def exp(a) -> Tensor:
    a = _coerce(a)
    out = Tensor._wrap(np.exp(a.data), "exp")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g * out.data)

    return _record(out, (a,), "exp", backward_fn)


# ---- reductions and shaping ----

def tensor_sum(a) -> Tensor:
    a = _coerce(a)
    out = Tensor._wrap(np.sum(a.data), "sum")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, np.full_like(a.data, float(g)))

    return _record(out, (a,), "sum", backward_fn)


def tensor_mean(a) -> Tensor:
    a = _coerce(a)
    n = a.size
    out = Tensor._wrap(np.mean(a.data), "mean")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, np.full_like(a.data, float(g) / n))

    return _record(out, (a,), "mean", backward_fn)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}")
    out = Tensor._wrap(a.data.reshape(shape).copy(), "reshape")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.data.shape))

    return _record(out, (a,), "reshape", backward_fn)


def gather(a, index: int) -> Tensor:
    """Select one element of a 1-D tensor as a scalar tensor."""
    a = _coerce(a)
    if a.ndim != 1:
        raise ShapeError(f"gather: expected a 1-D tensor, got shape {a.shape}")
    index = int(index)
    if not 0 <= index < a.size:
        raise IndexError(f"gather: index {index} out of range for length {a.size}")
    out = Tensor._wrap(np.asarray(a.data[index]), "gather")

    def backward_fn(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[index] = float(g)
            _accumulate(a, buf)

    return _record(out, (a,), "gather", backward_fn)


# ---- spatial ops ----

def max_pool2x2(a) -> Tensor:
    """2x2 max pooling with stride 2 on an (H, W, C) tensor; H and W even.

    Ties inside a window route the whole gradient to the first maximal
    position in window scan order, which keeps backward deterministic.
    """
    a = _coerce(a)
    if a.ndim != 3:
        raise ShapeError(f"max_pool2x2: expected (H, W, C), got {a.shape}")
    H, W, C = a.shape
    if H % 2 or W % 2:
        raise ShapeError(f"max_pool2x2: spatial dims must be even, got {a.shape}")
    h2, w2 = H // 2, W // 2
    windows = a.data.reshape(h2, 2, w2, 2, C).transpose(0, 2, 4, 1, 3).reshape(h2, w2, C, 4)
    winner = windows.argmax(axis=3)
    out = Tensor._wrap(np.take_along_axis(windows, winner[..., None], axis=3)[..., 0], "max_pool2x2")

    def backward_fn(g):
        if a.requires_grad:
            buf = np.zeros((h2, w2, C, 4))
            np.put_along_axis(buf, winner[..., None], g[..., None], axis=3)
            dx = buf.reshape(h2, w2, C, 2, 2).transpose(0, 3, 1, 4, 2).reshape(H, W, C)
            _accumulate(a, dx)

    return _record(out, (a,), "max_pool2x2", backward_fn)


def conv2d(x, w, b=None) -> Tensor:
    """Valid 2-D convolution: x (H, W, Cin), w (kh, kw, Cin, Cout), b (Cout,).

    Implemented as im2col + matmul; the backward pass scatters patch
    gradients back with one shifted add per kernel offset.
    """
    x, w = _coerce(x), _coerce(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected x (H,W,Cin) and w (kh,kw,Cin,Cout), got {x.shape} and {w.shape}")
    H, W, Cin = x.shape
    kh, kw, wcin, Cout = w.shape
    if wcin != Cin:
        raise ShapeError(f"conv2d: channel mismatch between x {x.shape} and w {w.shape}")
    if kh > H or kw > W:
        raise ShapeError(f"conv2d: kernel {w.shape[:2]} larger than input {x.shape[:2]}")
    bt = None
    if b is not None:
        bt = _coerce(b)
        if bt.shape != (Cout,):
            raise ShapeError(f"conv2d: bias shape {bt.shape} does not match {Cout} output channels")

    Ho, Wo = H - kh + 1, W - kw + 1
    # (Ho, Wo, Cin, kh, kw) -> (Ho*Wo, kh*kw*Cin), matching w.reshape(kh*kw*Cin, Cout)
    patches = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(0, 1))
    cols = patches.transpose(0, 1, 3, 4, 2).reshape(Ho * Wo, kh * kw * Cin)
    kmat = w.data.reshape(kh * kw * Cin, Cout)
    res = cols @ kmat
    if bt is not None:
        res = res + bt.data
    out = Tensor._wrap(res.reshape(Ho, Wo, Cout), "conv2d")

    def backward_fn(g):
        g2 = g.reshape(Ho * Wo, Cout)
        if w.requires_grad:
            _accumulate(w, (cols.T @ g2).reshape(kh, kw, Cin, Cout))
        if bt is not None and bt.requires_grad:
            _accumulate(bt, g2.sum(axis=0))
        if x.requires_grad:
            gk = (g2 @ kmat.T).reshape(Ho, Wo, kh, kw, Cin)
            dx = np.zeros((H, W, Cin))
            for i in range(kh):
                for j in range(kw):
                    dx[i:i + Ho, j:j + Wo, :] += gk[:, :, i, j, :]
            _accumulate(x, dx)

    parents = (x, w) if bt is None else (x, w, bt)
    return _record(out, parents, "conv2d", backward_fn)
