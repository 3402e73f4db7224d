"""Statistical imputation branch: iterative chained ridge regressions.

Each column with missing cells gets a ridge regression on a sparse,
gated subset of the other columns. Sweeps are Jacobi style (every column
regresses against the previous sweep's matrix), a held-out slice of
observed cells drives early stopping, and the fitted equations replay
deterministically on new data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (
    DataMatrix,
    ImputationResult,
    MaskMatrix,
    PROV_MICE,
    PROV_OBSERVED,
)
from .errors import ContractError

__all__ = ["MiceConfig", "SparseGate", "MiceModel", "rank_features",
           "mice_fit_impute", "mice_transform", "column_mean_fill"]


@dataclass
class MiceConfig:
    ridge: float = 1e-3
    max_iterations: int = 10
    stall_patience: int = 2
    cv_fraction: float = 0.1
    top_k: int = 8
    transform_sweeps: int = 3
    rel_tol: float = 1e-4
    retention_high: float = 0.95
    retention_floor: float = 0.05


@dataclass
class SparseGate:
    """Per-column retention probabilities for one regression target."""

    retention: np.ndarray  # length d; target's own slot is 0
    top_k: int

    def retained_features(self) -> np.ndarray:
        return np.flatnonzero(self.retention >= 0.5)


@dataclass
class MiceModel:
    """Fitted chained equations: one linear map per visited column."""

    coef: dict[int, np.ndarray]        # full-width weight vector, zeros off-support
    intercept: dict[int, float]
    visit_order: list[int]
    col_means: np.ndarray
    ridge: float
    transform_sweeps: int
    cv_loss_trace: list[float] = field(default_factory=list)
    stopped_at: int = 0
    gates: dict[int, SparseGate] = field(default_factory=dict)

    @property
    def n_cols(self) -> int:
        return self.col_means.size


def column_mean_fill(values: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Column means over observed cells; all-missing columns fall back to 0."""
    d = values.shape[1]
    means = np.zeros(d)
    for j in range(d):
        obs = values[bits[:, j] == 1, j]
        if obs.size:
            means[j] = obs.mean()
    return means


def rank_features(x: DataMatrix, m: MaskMatrix, target_col: int,
                  top_k: int = 8, retention_high: float = 0.95,
                  retention_floor: float = 0.05) -> SparseGate:
    """Score every other column's usefulness for predicting target_col.

    Separability score on complete pairs: split the pairs at the target's
    median and compare the predictor's group means against its group
    variances. The top_k scorers get the high retention probability.
    """
    values, bits = x.values, m.bits
    d = values.shape[1]
    if bits[:, target_col].sum() < 1:
        raise ContractError(f"target column {target_col} has no observed cells")
    scores = np.zeros(d)
    for j in range(d):
        if j == target_col:
            continue
        pair = (bits[:, target_col] == 1) & (bits[:, j] == 1)
        if pair.sum() < 2:
            continue
        t = values[pair, target_col]
        p = values[pair, j]
        med = np.median(t)
        lo, hi = p[t <= med], p[t > med]
        if lo.size == 0 or hi.size == 0:
            continue
        spread = lo.var() + hi.var()
        scores[j] = (lo.mean() - hi.mean()) ** 2 / (spread + 1e-12)
    order = sorted((jj for jj in range(d) if jj != target_col),
                   key=lambda jj: (-scores[jj], jj))
    keep = set(order[:min(top_k, d - 1)])
    retention = np.zeros(d)
    for j in range(d):
        if j == target_col:
            continue
        retention[j] = retention_high if j in keep else retention_floor
    return SparseGate(retention, top_k)


def _ridge_solve(feats: np.ndarray, y: np.ndarray, ridge: float,
                 col: int) -> np.ndarray:
    """Normal-equation ridge fit with unpenalized intercept.

    Returns k+1 weights (features then intercept). Singular systems get
    one retry at 10x the ridge strength.
    """
    n, k = feats.shape
    a = np.column_stack([feats, np.ones(n)])
    gram = a.T @ a
    rhs = a.T @ y
    for strength in (ridge, ridge * 10.0):
        m = gram.copy()
        m[np.arange(k), np.arange(k)] += strength
        try:
            w = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(w)):
            return w
    raise ContractError(f"singular normal equations for column {col}")


def _sweep(matrix: np.ndarray, bits: np.ndarray, model: MiceModel) -> np.ndarray:
    """One Jacobi pass of the fitted equations over missing cells."""
    prev = matrix.copy()
    out = matrix.copy()
    for j in model.visit_order:
        miss = bits[:, j] == 0
        if not miss.any():
            continue
        out[miss, j] = prev[miss] @ model.coef[j] + model.intercept[j]
    return out


def _replay(values: np.ndarray, bits: np.ndarray,
            model: MiceModel) -> np.ndarray:
    filled = values.copy()
    missing = bits == 0
    filled[missing] = np.broadcast_to(model.col_means, values.shape)[missing]
    for _ in range(model.transform_sweeps):
        filled = _sweep(filled, bits, model)
    return filled


def mice_fit_impute(x: DataMatrix, m: MaskMatrix, cfg: MiceConfig,
                    rng: np.random.Generator
                    ) -> tuple[ImputationResult, MiceModel]:
    """Fit the chained equations and impute the training matrix.

    Iterates Jacobi sweeps with gated feature subsets (one Bernoulli draw
    per column per iteration), monitors a held-out slice of observed
    cells, and stops once the held-out loss stalls. The fitted model is a
    final deterministic refit on the retained feature sets; the emitted
    fill is that model replayed from the column-mean start, so
    :func:`mice_transform` reproduces it on the same rows.
    """
    values, bits = x.values, m.bits
    n, d = values.shape
    col_means = column_mean_fill(values, bits)
    provenance = np.where(bits == 1, PROV_OBSERVED, PROV_MICE)

    missing_counts = (bits == 0).sum(axis=0)
    if missing_counts.sum() == 0:
        model = MiceModel({}, {}, [], col_means, cfg.ridge, cfg.transform_sweeps)
        return ImputationResult(values.copy(), provenance), model

    # targets need >= 2 observed cells to support a regression
    target_cols = [j for j in range(d)
                   if missing_counts[j] > 0 and bits[:, j].sum() >= 2]
    visit_order = sorted(target_cols, key=lambda j: (missing_counts[j], j))

    # internal holdout: hide a slice of observed cells in target columns
    holdout = np.zeros((n, d), dtype=bool)
    if cfg.cv_fraction > 0:
        for j in visit_order:
            obs_rows = np.flatnonzero(bits[:, j] == 1)
            k = int(np.floor(cfg.cv_fraction * obs_rows.size))
            if k:
                chosen = rng.choice(obs_rows, size=k, replace=False)
                holdout[chosen, j] = True
    work_bits = bits * (~holdout)

    gates = {j: rank_features(x, MaskMatrix(work_bits), j, cfg.top_k,
                              cfg.retention_high, cfg.retention_floor)
             for j in visit_order}

    work_means = column_mean_fill(values, work_bits)
    fill = values.copy()
    work_missing = work_bits == 0
    fill[work_missing] = np.broadcast_to(work_means, values.shape)[work_missing]

    cv_trace: list[float] = []
    best = np.inf
    stall = 0
    ho_cells = holdout.any()
    for _ in range(cfg.max_iterations):
        prev = fill.copy()
        for j in visit_order:
            gate = gates[j]
            draw = rng.random(d) < gate.retention
            feat_idx = np.flatnonzero(draw)
            obs = work_bits[:, j] == 1
            if obs.sum() < 2:
                continue
            if feat_idx.size == 0:
                w = np.array([values[obs, j].mean()])
                miss = work_bits[:, j] == 0
                fill[miss, j] = w[-1]
                continue
            w = _ridge_solve(prev[obs][:, feat_idx], values[obs, j],
                             cfg.ridge, j)
            miss = work_bits[:, j] == 0
            fill[miss, j] = prev[miss][:, feat_idx] @ w[:-1] + w[-1]
        if ho_cells:
            cv = float(np.mean((fill[holdout] - values[holdout]) ** 2))
            cv_trace.append(cv)
            if cv < best * (1.0 - cfg.rel_tol):
                stall = 0
            else:
                stall += 1
            best = min(best, cv)
            if stall >= cfg.stall_patience:
                break

    # deterministic refit on the retained sets, all observed cells restored
    final_matrix = fill.copy()
    obs_all = bits == 1
    final_matrix[obs_all] = values[obs_all]
    coef: dict[int, np.ndarray] = {}
    intercept: dict[int, float] = {}
    for j in visit_order:
        feat_idx = np.flatnonzero(gates[j].retention >= 0.5)
        obs = bits[:, j] == 1
        full_w = np.zeros(d)
        if feat_idx.size == 0:
            b = values[obs, j].mean()
        else:
            w = _ridge_solve(final_matrix[obs][:, feat_idx], values[obs, j],
                             cfg.ridge, j)
            full_w[feat_idx] = w[:-1]
            b = float(w[-1])
        coef[j] = full_w
        intercept[j] = b

    model = MiceModel(coef, intercept, visit_order, col_means, cfg.ridge,
                      cfg.transform_sweeps, cv_trace, len(cv_trace), gates)
    out = _replay(values, bits, model)
    return ImputationResult(out, provenance), model


def mice_transform(model: MiceModel, x_new: DataMatrix,
                   m_new: MaskMatrix) -> ImputationResult:
    """Apply the fitted equations to new data: column-mean start, then a
    fixed number of Jacobi sweeps. No refitting, fully deterministic."""
    if x_new.n_cols != model.n_cols:
        raise ContractError(
            f"column count {x_new.n_cols} != fitted {model.n_cols}")
    values, bits = x_new.values, m_new.bits
    provenance = np.where(bits == 1, PROV_OBSERVED, PROV_MICE)
    out = _replay(values, bits, model)
    return ImputationResult(out, provenance)
