"""Synthetic complete datasets: correlated Gaussian features with binary
labels from a logistic model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import DataMatrix, LabelVector
from ..errors import ContractError

__all__ = ["SynthSpec", "synth_generate"]


@dataclass
class SynthSpec:
    n_rows: int = 1000
    n_cols: int = 8
    corr_kind: str = "ar1"        # ar1 | exchangeable | identity
    rho: float = 0.6
    label_weights: list[float] | None = None   # None: alternating +-1/sqrt(d)
    label_bias: float = 0.0
    label_noise: float = 1.0

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ContractError("n_rows and n_cols must be positive")
        if self.corr_kind not in ("ar1", "exchangeable", "identity"):
            raise ContractError(f"unknown corr_kind {self.corr_kind!r}")

    def covariance(self) -> np.ndarray:
        d = self.n_cols
        if self.corr_kind == "identity":
            return np.eye(d)
        if self.corr_kind == "ar1":
            idx = np.arange(d)
            return self.rho ** np.abs(idx[:, None] - idx[None, :])
        cov = np.full((d, d), self.rho)
        np.fill_diagonal(cov, 1.0)
        return cov

    def weights(self) -> np.ndarray:
        if self.label_weights is not None:
            w = np.asarray(self.label_weights, dtype=np.float64)
            if w.size != self.n_cols:
                raise ContractError("label_weights length must match n_cols")
            return w
        signs = np.where(np.arange(self.n_cols) % 2 == 0, 1.0, -1.0)
        return signs / np.sqrt(self.n_cols)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def synth_generate(spec: SynthSpec, seed: int) -> tuple[DataMatrix, LabelVector]:
    """Draw a fully observed matrix plus Bernoulli labels from a logistic
    model on the features. The covariance must be positive definite."""
    cov = spec.covariance()
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ContractError("covariance is not positive definite") from None
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((spec.n_rows, spec.n_cols))
    x = z @ chol.T
    logits = x @ spec.weights() + spec.label_bias
    if spec.label_noise > 0:
        logits = logits + spec.label_noise * rng.standard_normal(spec.n_rows)
    probs = _sigmoid(logits)
    y = (rng.random(spec.n_rows) < probs).astype(np.float64)
    names = [f"f{j}" for j in range(spec.n_cols)]
    return DataMatrix(x, names), LabelVector(y)
