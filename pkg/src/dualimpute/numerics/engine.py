"""Dense float64 tensors with taped reverse-mode differentiation.

Every primitive op records a node on the innermost active tape. Gradients
are obtained with :func:`backward`, which walks the tape in reverse and
builds adjoints out of the same primitives, so a second call to
``backward`` over quantities produced with ``create_graph=True``
differentiates through the first (nested-tape / double-backward).

Matrix products whose extents are all <= 16 use a fixed k-order
accumulation kernel so results are reproducible bit-for-bit against a
plain triple-loop reference; larger products dispatch to BLAS.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "Tape",
    "Node",
    "tape",
    "active_tape",
    "no_record",
    "as_tensor",
    "zeros_like",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "add_const",
    "mul_const",
    "add_bias",
    "matmul",
    "transpose_last2",
    "reshape",
    "broadcast_to",
    "concat",
    "slice_axis",
    "embed_slice",
    "sum_all",
    "sum_axis",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "sqrt",
    "softplus",
    "softmax_last",
]

_SMALL_MATMUL_LIMIT = 16


class Tensor:
    """Immutable view over a float64 ndarray, usable as a tape node."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # Arithmetic sugar delegating to the primitives below. Scalars are
    # folded through the *_const ops so they stay off the adjoint path.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_const(self, -float(other))

    def __rsub__(self, other):
        return add_const(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_const(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul_const(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    """One recorded primitive: inputs, output, and the op's vjp."""

    __slots__ = ("op", "inputs", "output", "parents", "vjp")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 parents: tuple[int, ...], vjp: Callable[[Tensor], tuple]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered op record; parents of every node precede it."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._producer: dict[int, int] = {}

    def append(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, vjp) -> None:
        parents = tuple(self._producer.get(id(t), -1) for t in inputs)
        self.nodes.append(Node(op, inputs, output, parents, vjp))
        self._producer[id(output)] = len(self.nodes) - 1

    def __len__(self) -> int:
        return len(self.nodes)


_TAPE_STACK: list[Tape] = []
_RECORDING: list[bool] = [True]


@contextmanager
def tape() -> Iterator[Tape]:
    t = Tape()
    _TAPE_STACK.append(t)
    try:
        yield t
    finally:
        _TAPE_STACK.pop()


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


@contextmanager
def no_record() -> Iterator[None]:
    _RECORDING.append(False)
    try:
        yield
    finally:
        _RECORDING.pop()


def _emit(op: str, inputs: tuple[Tensor, ...], out: Tensor, vjp) -> Tensor:
    t = active_tape()
    if t is not None and _RECORDING[-1]:
        t.append(op, inputs, out, vjp)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros(t.shape))


# ---------------------------------------------------------------------------
# primitives


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _emit("add", (a, b), out, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _emit("sub", (a, b), out, lambda g: (g, neg(g)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _emit("mul", (a, b), out, lambda g: (mul(g, b), mul(g, a)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    out = Tensor(a.data / b.data)
    return _emit("div", (a, b), out,
                 lambda g: (div(g, b), neg(div(mul(g, out), b))))


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _emit("neg", (a,), out, lambda g: (neg(g),))


def add_const(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + c)
    return _emit("add_const", (a,), out, lambda g: (g,))


def mul_const(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    return _emit("mul_const", (a,), out, lambda g: (mul_const(g, c),))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b broadcast over all leading axes (bias on the last axis)."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: x{x.shape} incompatible with bias{b.shape}")
    out = Tensor(x.data + b.data)

    def vjp(g: Tensor):
        if g.ndim == 1:
            return g, g
        flat = reshape(g, (-1, g.shape[-1])) if g.ndim > 2 else g
        return g, sum_axis(flat, 0)

    return _emit("add_bias", (x, b), out, vjp)


def _small_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[1]))
    for t in range(a.shape[1]):
        out += a[:, t:t + 1] * b[t:t + 1, :]
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 2Dx2D, batched 3Dx3D, or 3Dx2D (shared right factor)."""
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
        if (a.shape[0] <= _SMALL_MATMUL_LIMIT and a.shape[1] <= _SMALL_MATMUL_LIMIT
                and b.shape[1] <= _SMALL_MATMUL_LIMIT):
            raw = _small_matmul(a.data, b.data)
        else:
            raw = a.data @ b.data
    elif a.ndim == 3 and b.ndim in (2, 3):
        if a.shape[-1] != b.shape[-2 if b.ndim == 3 else 0]:
            raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
        if b.ndim == 3 and a.shape[0] != b.shape[0]:
            raise DimensionError(f"matmul: batch {a.shape[0]} != {b.shape[0]}")
        raw = a.data @ b.data
    else:
        raise DimensionError(f"matmul: unsupported ranks {a.ndim} @ {b.ndim}")
    out = Tensor(raw)

    def vjp(g: Tensor):
        da = matmul(g, transpose_last2(b))
        if a.ndim == 3 and b.ndim == 2:
            batch, rows, k = a.shape
            a2 = reshape(a, (batch * rows, k))
            g2 = reshape(g, (batch * rows, g.shape[-1]))
            db = matmul(transpose_last2(a2), g2)
        else:
            db = matmul(transpose_last2(a), g)
        return da, db

    return _emit("matmul", (a, b), out, vjp)


def transpose_last2(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise DimensionError("transpose_last2 needs ndim >= 2")
    out = Tensor(np.swapaxes(a.data, -1, -2))
    return _emit("transpose_last2", (a,), out, lambda g: (transpose_last2(g),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    orig = a.shape
    return _emit("reshape", (a,), out, lambda g: (reshape(g, orig),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(np.broadcast_to(a.data, shape))
    a_shape = a.shape

    def vjp(g: Tensor):
        pad = len(shape) - len(a_shape)
        padded = (1,) * pad + a_shape
        r = g
        for ax in range(len(shape)):
            if padded[ax] == 1 and shape[ax] != 1:
                r = sum_axis(r, ax, keepdims=True)
        return (reshape(r, a_shape),)

    return _emit("broadcast_to", (a,), out, vjp)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = tuple(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    extents = [p.shape[axis] for p in parts]

    def vjp(g: Tensor):
        grads, off = [], 0
        for ext in extents:
            grads.append(slice_axis(g, axis, off, off + ext))
            off += ext
        return tuple(grads)

    return _emit("concat", parts, out, vjp)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    out = Tensor(a.data[tuple(idx)].copy())
    full = a.shape[axis]
    return _emit("slice_axis", (a,), out,
                 lambda g: (embed_slice(g, axis, start, full),))


def embed_slice(a: Tensor, axis: int, start: int, full: int) -> Tensor:
    """Place `a` into a zero tensor whose extent along `axis` is `full`."""
    shape = list(a.shape)
    ext = shape[axis]
    shape[axis] = full
    raw = np.zeros(shape)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + ext)
    raw[tuple(idx)] = a.data
    out = Tensor(raw)
    return _emit("embed_slice", (a,), out,
                 lambda g: (slice_axis(g, axis, start, start + ext),))


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    shape = a.shape
    return _emit("sum_all", (a,), out,
                 lambda g: (broadcast_to(reshape(g, (1,) * len(shape)), shape),))


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.shape
    ax = axis % a.ndim

    def vjp(g: Tensor):
        if not keepdims:
            kshape = list(shape)
            kshape[ax] = 1
            g = reshape(g, kshape)
        return (broadcast_to(g, shape),)

    return _emit("sum_axis", (a,), out, vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    raw = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(raw)
    return _emit("sigmoid", (a,), out,
                 lambda g: (mul(g, mul(out, add_const(neg(out), 1.0))),))


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))
    return _emit("tanh", (a,), out,
                 lambda g: (mul(g, add_const(neg(mul(out, out)), 1.0)),))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    gate = Tensor((a.data > 0).astype(np.float64))
    return _emit("relu", (a,), out, lambda g: (mul(g, gate),))


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    return _emit("exp", (a,), out, lambda g: (mul(g, out),))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _emit("log", (a,), out, lambda g: (div(g, a),))


def sqrt(a: Tensor) -> Tensor:
    out = Tensor(np.sqrt(a.data))
    return _emit("sqrt", (a,), out, lambda g: (div(g, mul_const(out, 2.0)),))


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, a.data))
    return _emit("softplus", (a,), out, lambda g: (mul(g, sigmoid(a)),))


def softmax_last(a: Tensor) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=-1, keepdims=True))

    def vjp(g: Tensor):
        inner = sum_axis(mul(g, out), -1, keepdims=True)
        return (mul(out, sub(g, broadcast_to(inner, g.shape))),)

    return _emit("softmax_last", (a,), out, vjp)


# ---------------------------------------------------------------------------
# reverse pass


def backward(root: Tensor, wrt: Sequence[Tensor],
             create_graph: bool = False) -> list[Tensor]:
    """Adjoints of a scalar `root` with respect to each tensor in `wrt`.

    Tensors not reachable from `root` get zero gradients. The recording
    tape must still be active; with ``create_graph=True`` the adjoint
    computation itself is recorded, enabling higher-order derivatives.
    """
    if root.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    t = active_tape()
    if t is None:
        raise ContractError("backward requires an active tape")

    snapshot = list(t.nodes)
    adjoints: dict[int, Tensor] = {id(root): Tensor(np.ones(root.shape))}

    ctx = no_record() if not create_graph else _nullcontext()
    with ctx:
        for node in reversed(snapshot):
            g = adjoints.get(id(node.output))
            if g is None:
                continue
            grads = node.vjp(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None:
                    continue
                prev = adjoints.get(id(inp))
                adjoints[id(inp)] = gi if prev is None else add(prev, gi)

    return [adjoints.get(id(p), zeros_like(p)) for p in wrt]


@contextmanager
def _nullcontext():
    yield
