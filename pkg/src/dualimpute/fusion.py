"""Fusion of the two branch outputs and the task-supervised fusion head.

Cross-path attention: a query projected from the pooled missingness
embedding attends over the key/value projection of the concatenated
branch outputs. The adaptive head mixes imputation-derived and
task-derived features with a confidence-driven convex weight and emits
the downstream prediction.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .errors import ContractError
from .numerics import Tensor

__all__ = ["CrossPathAttention", "AdaptiveFusionHead", "cross_path_fuse",
           "confidence_signals", "binary_cross_entropy", "convex_mix",
           "adaptive_fuse"]


class CrossPathAttention:
    """Query from the missingness embedding; keys/values from the
    concatenated branch outputs (one key/value pair per sample)."""

    def __init__(self, n_features: int, embed_dim: int, d_k: int = 16,
                 d_v: int = 16, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_features = n_features
        self.d_k = d_k
        self.d_v = d_v
        self.params: dict[str, Tensor] = {
            "wq": nm.glorot(rng, embed_dim, d_k),
            "wk": nm.glorot(rng, 2 * n_features, d_k),
            "wv": nm.glorot(rng, 2 * n_features, d_v),
        }


def cross_path_fuse(cpa: CrossPathAttention, embedding: Tensor,
                    x_mice: Tensor, x_gain: Tensor,
                    per_step: bool = False) -> tuple[Tensor, Tensor]:
    """Fuse branch outputs for a batch; returns (h_fused, attention weights).

    `embedding` is (n, d, e) and is mean-pooled to one query per sample by
    default; `per_step=True` keeps one query per feature step instead.
    """
    p = cpa.params
    n = x_mice.shape[0]
    pair = nm.concat([x_mice, x_gain], 1)                   # (n, 2d)
    k = nm.reshape(nm.matmul(pair, p["wk"]), (n, 1, cpa.d_k))
    v = nm.reshape(nm.matmul(pair, p["wv"]), (n, 1, cpa.d_v))
    if per_step:
        q = nm.matmul(embedding, p["wq"])                   # (n, d, d_k)
        out, weights = nm.scaled_attention(q, k, v)
        return out, weights
    pooled = nm.mean_axis(embedding, 1)                     # (n, e)
    q = nm.reshape(nm.matmul(pooled, p["wq"]), (n, 1, cpa.d_k))
    out, weights = nm.scaled_attention(q, k, v)
    return nm.reshape(out, (n, cpa.d_v)), weights


def binary_cross_entropy(y: np.ndarray, p: np.ndarray) -> float:
    """Mean binary cross-entropy with exact zero at exact predictions."""
    y = np.asarray(y, dtype=np.float64).ravel()
    p = np.asarray(p, dtype=np.float64).ravel()
    out = np.zeros_like(p)
    rough = p != y
    pc = np.clip(p[rough], 1e-12, 1.0 - 1e-12)
    yc = y[rough]
    out[rough] = -(yc * np.log(pc) + (1.0 - yc) * np.log(1.0 - pc))
    return float(out.mean()) if out.size else 0.0


def confidence_signals(x_imputed: np.ndarray, x_true: np.ndarray,
                       bits: np.ndarray, y: np.ndarray,
                       y_prelim: np.ndarray) -> tuple[float, float]:
    """Training-time confidence pair: masked-cell MSE and preliminary
    prediction cross-entropy. Requires ground truth at masked cells."""
    miss = bits == 0
    c_imp = float(np.mean((x_imputed[miss] - x_true[miss]) ** 2)) if miss.any() else 0.0
    c_task = binary_cross_entropy(y, y_prelim)
    return c_imp, c_task


def convex_mix(lam: Tensor, h_imp: Tensor, h_task: Tensor) -> Tensor:
    """lam * h_imp + (1 - lam) * h_task with a scalar mixing weight."""
    if lam.size != 1:
        raise ContractError("mixing weight must be scalar")
    lam_b = nm.broadcast_to(nm.reshape(lam, (1,) * h_imp.ndim), h_imp.shape)
    one_minus = nm.broadcast_to(nm.reshape(nm.add_const(nm.neg(lam), 1.0),
                                           (1,) * h_imp.ndim), h_imp.shape)
    return nm.add(nm.mul(lam_b, h_imp), nm.mul(one_minus, h_task))


class AdaptiveFusionHead:
    """Confidence-driven mixer plus the binary task head."""

    def __init__(self, d_fused: int, d_trunk: int, d_feat: int = 16,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_feat = d_feat
        self.params: dict[str, Tensor] = {
            "w_t": Tensor(np.zeros((3, 1))),
            "proj_imp_w": nm.glorot(rng, d_fused, d_feat),
            "proj_imp_b": Tensor(np.zeros(d_feat)),
            "proj_task_w": nm.glorot(rng, d_trunk, d_feat),
            "proj_task_b": Tensor(np.zeros(d_feat)),
            "head_w": nm.glorot(rng, d_feat, 1),
            "head_b": Tensor(np.zeros(1)),
        }

    def project_imp(self, h_fused: Tensor) -> Tensor:
        return nm.linear(h_fused, self.params["proj_imp_w"],
                         self.params["proj_imp_b"])

    def project_task(self, trunk_feats: Tensor) -> Tensor:
        return nm.linear(trunk_feats, self.params["proj_task_w"],
                         self.params["proj_task_b"])

    def mixing_weight(self, t_norm: float, c_imp: float,
                      c_task: float) -> Tensor:
        signals = Tensor(np.array([[t_norm, c_imp, c_task]]))
        return nm.sigmoid(nm.matmul(signals, self.params["w_t"]))

    def head_logits(self, mixed: Tensor) -> Tensor:
        return nm.linear(mixed, self.params["head_w"], self.params["head_b"])

    def head_probs(self, mixed: Tensor) -> Tensor:
        return nm.sigmoid(self.head_logits(mixed))


def adaptive_fuse(head: AdaptiveFusionHead, t_norm: float, c_imp: float,
                  c_task: float, h_imp: Tensor, h_task: Tensor
                  ) -> tuple[Tensor, Tensor]:
    """Mix the two feature streams and predict; returns (y_hat, lambda)."""
    if not 0.0 <= t_norm <= 1.0:
        raise ContractError("t_norm must lie in [0, 1]")
    lam = head.mixing_weight(t_norm, c_imp, c_task)
    mixed = convex_mix(lam, h_imp, h_task)
    return head.head_probs(mixed), lam
