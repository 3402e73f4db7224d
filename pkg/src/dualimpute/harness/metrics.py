"""Evaluation metrics for imputation quality and downstream ranking."""

from __future__ import annotations

import numpy as np

from ..data import MaskMatrix
from ..errors import ContractError

__all__ = ["rmse_masked", "auroc"]


def rmse_masked(x_true: np.ndarray, x_imputed: np.ndarray,
                m: MaskMatrix) -> float:
    """Root mean squared error over the hidden cells only."""
    miss = m.bits == 0
    if not miss.any():
        raise ContractError("rmse_masked needs at least one masked cell")
    diff = x_true[miss] - x_imputed[miss]
    return float(np.sqrt(np.mean(diff ** 2)))


def auroc(y_true: np.ndarray, scores: np.ndarray) -> float:
    """Probability a random positive outscores a random negative; ties
    count half (rank statistic)."""
    y = np.asarray(y_true, dtype=np.float64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.size != s.size:
        raise ContractError("labels and scores must align")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ContractError("auroc needs both classes present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(y.size, dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < y.size:
        j = i
        while j + 1 < y.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
