from .engine import (
    Node,
    Tape,
    Tensor,
    active_tape,
    add,
    add_bias,
    add_const,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    div,
    embed_slice,
    exp,
    log,
    matmul,
    mul,
    mul_const,
    neg,
    no_record,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    softmax_last,
    softplus,
    sqrt,
    sub,
    sum_all,
    sum_axis,
    tanh,
    tape,
    transpose_last2,
    zeros_like,
)
from .fd import finite_diff, max_rel_err
from .layers import (
    bce_with_logits,
    causal_bias,
    glorot,
    grad_norm_of_scalar_field,
    linear,
    lstm_step,
    mean_all,
    mean_axis,
    row_norms,
    scaled_attention,
    stack,
)
from .optim import Adam
