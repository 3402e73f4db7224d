"""Composite building blocks assembled from the taped primitives."""

from __future__ import annotations

import numpy as np

from . import engine as en
from .engine import Tensor

__all__ = [
    "linear",
    "mean_all",
    "mean_axis",
    "stack",
    "scaled_attention",
    "causal_bias",
    "lstm_step",
    "row_norms",
    "grad_norm_of_scalar_field",
    "bce_with_logits",
    "glorot",
]

NEG_LARGE = -1e30


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return en.add_bias(en.matmul(x, w), b)


def mean_all(x: Tensor) -> Tensor:
    return en.mul_const(en.sum_all(x), 1.0 / x.size)


def mean_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    return en.mul_const(en.sum_axis(x, axis, keepdims), 1.0 / x.shape[axis])


def stack(tensors: list[Tensor], axis: int) -> Tensor:
    """Stack same-shape tensors along a new axis."""
    widened = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else len(shape) + 1 + axis, 1)
        widened.append(en.reshape(t, shape))
    return en.concat(widened, axis)


def causal_bias(steps: int) -> Tensor:
    """Additive attention bias: large negative above the diagonal."""
    m = np.triu(np.full((steps, steps), NEG_LARGE), k=1)
    return Tensor(m)


def scaled_attention(q: Tensor, k: Tensor, v: Tensor,
                     bias: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Softmax(q kᵀ / sqrt(dk) + bias) v. Returns (output, weights).

    Works on 2D (steps x dk) and batched 3D (batch x steps x dk) inputs;
    `bias` is broadcast over the batch axis when present.
    """
    dk = q.shape[-1]
    scores = en.mul_const(en.matmul(q, en.transpose_last2(k)), 1.0 / np.sqrt(dk))
    if bias is not None:
        b = bias
        if scores.ndim == 3 and b.ndim == 2:
            b = en.broadcast_to(en.reshape(b, (1,) + b.shape), scores.shape)
        scores = en.add(scores, b)
    weights = en.softmax_last(scores)
    return en.matmul(weights, v), weights


def lstm_step(x_t: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor,
              hidden: int) -> tuple[Tensor, Tensor]:
    """One step of the standard LSTM update with a fused gate matrix.

    `w` has shape (hidden + input_dim, 4 * hidden); gate order i, f, g, o.
    """
    z = linear(en.concat([h, x_t], 1), w, b)
    i = en.sigmoid(en.slice_axis(z, 1, 0, hidden))
    f = en.sigmoid(en.slice_axis(z, 1, hidden, 2 * hidden))
    g = en.tanh(en.slice_axis(z, 1, 2 * hidden, 3 * hidden))
    o = en.sigmoid(en.slice_axis(z, 1, 3 * hidden, 4 * hidden))
    c_new = en.add(en.mul(f, c), en.mul(i, g))
    h_new = en.mul(o, en.tanh(c_new))
    return h_new, c_new


def row_norms(x: Tensor, eps: float = 1e-24) -> Tensor:
    """Euclidean norm of each row of a 2D tensor, stabilized near zero."""
    return en.sqrt(en.add_const(en.sum_axis(en.mul(x, x), 1), eps))


def grad_norm_of_scalar_field(field, x: Tensor, mode: str = "exact",
                              h: float = 1e-5) -> Tensor:
    """Euclidean norm of the input gradient of a scalar field at `x`.

    In "exact" mode the gradient comes from a taped reverse pass recorded
    with ``create_graph=True``, so the norm stays differentiable with
    respect to the field's parameters. "finite_diff" estimates the same
    gradient by central differences for cross-validation.
    """
    if mode == "finite_diff":
        from .fd import finite_diff

        with en.no_record():
            g = finite_diff(lambda arr: field(Tensor(arr)).item(),
                            x.data.copy(), h)
        return Tensor(np.sqrt((g * g).sum() + 1e-24))
    if mode != "exact":
        raise ValueError(f"unknown gradient mode: {mode!r}")
    s = field(x)
    (gx,) = en.backward(s, [x], create_graph=True)
    flat = en.reshape(gx, (gx.size,))
    return en.sqrt(en.add_const(en.sum_all(en.mul(flat, flat)), 1e-24))


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy from logits; targets are constants in {0,1}."""
    return mean_all(en.sub(en.softplus(logits), en.mul(logits, targets)))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
           shape: tuple[int, ...] | None = None) -> Tensor:
    scale = np.sqrt(6.0 / (fan_in + fan_out))
    shape = shape if shape is not None else (fan_in, fan_out)
    return Tensor(rng.uniform(-scale, scale, shape))
