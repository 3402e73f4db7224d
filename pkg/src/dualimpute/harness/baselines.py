"""Reference imputers the benchmark compares against, plus the fixed
downstream probe shared by every method."""

from __future__ import annotations

import hashlib

import numpy as np

from ..data import (
    DataMatrix,
    ImputationResult,
    MaskMatrix,
    PROV_GAIN,
    PROV_MICE,
    PROV_OBSERVED,
)
from ..errors import ContractError
from ..gain import GainConfig, gain_impute, gain_train
from ..masking import CurriculumMasking
from ..mice import MiceConfig, column_mean_fill, mice_fit_impute

__all__ = ["mean_impute", "baseline_impute", "LogisticProbe"]


def mean_impute(x: DataMatrix, m: MaskMatrix,
                means: np.ndarray | None = None
                ) -> tuple[ImputationResult, np.ndarray]:
    """Fill gaps with column means of observed cells; returns the means so
    a training fit can be replayed on held-out data."""
    if means is None:
        means = column_mean_fill(x.values, m.bits)
    filled = np.where(m.bits == 1, np.nan_to_num(x.values),
                      np.broadcast_to(means, x.values.shape))
    provenance = np.where(m.bits == 1, PROV_OBSERVED, PROV_MICE)
    return ImputationResult(filled, provenance), means


def baseline_impute(method: str, x: DataMatrix, m: MaskMatrix,
                    rng: np.random.Generator,
                    mice_cfg: MiceConfig | None = None,
                    gain_cfg: GainConfig | None = None,
                    curriculum: CurriculumMasking | None = None
                    ) -> ImputationResult:
    """Standalone reference fill: column means, chained equations, or the
    adversarial generator trained on the incomplete matrix itself (masks
    compound on top of the real gaps; no routing, no fusion)."""
    if method == "mean":
        result, _ = mean_impute(x, m)
        return result
    if method == "mice":
        result, _ = mice_fit_impute(x, m, mice_cfg or MiceConfig(), rng)
        return result
    if method == "gain":
        cfg = gain_cfg or GainConfig()
        curriculum = curriculum or CurriculumMasking()
        for spec in (curriculum.mcar, curriculum.mar, curriculum.mnar):
            spec.allow_compounding = True
        trained = gain_train(x, m, cfg, curriculum)
        values = gain_impute(trained.generator, x, m)
        provenance = np.where(m.bits == 1, PROV_OBSERVED, PROV_GAIN)
        return ImputationResult(values, provenance)
    raise ContractError(f"unknown baseline method {method!r}")


class LogisticProbe:
    """Plain-gradient-descent logistic regression, fixed steps and rate.

    Deterministic zero initialization: the same probe is trained on every
    method's imputed data, so imputation quality is the only variable.
    The checksum fingerprints the initial state and hyperparameters.
    """

    def __init__(self, n_features: int, steps: int = 500, lr: float = 0.1):
        self.steps = steps
        self.lr = lr
        self.w = np.zeros(n_features)
        self.b = 0.0
        self.checksum = hashlib.sha256(
            self.w.tobytes() + f"|{self.b}|{steps}|{lr}".encode()
        ).hexdigest()

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LogisticProbe":
        if x.shape[0] != y.size:
            raise ContractError("probe features and labels must align")
        n = x.shape[0]
        for _ in range(self.steps):
            p = self.predict(x)
            err = p - y
            self.w -= self.lr * (x.T @ err) / n
            self.b -= self.lr * float(err.mean())
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.w + self.b
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                        np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
