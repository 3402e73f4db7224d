"""Synthetic missingness generators and the three-phase training schedule.

Mechanisms: MCAR draws one rate per call and hides cells independently;
MAR hides column j with probability tied to its correlation with a set of
never-masked anchor columns; MNAR hides cell (i, j) with probability
sigmoid(a * x[i, j] + b) evaluated on the true value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DataMatrix, MaskMatrix
from .errors import ContractError

MCAR = "MCAR"
MAR = "MAR"
MNAR = "MNAR"

MECHANISMS = (MCAR, MAR, MNAR)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


@dataclass
class MaskingSpec:
    mechanism: str = MCAR
    mcar_rate_low: float = 0.1
    mcar_rate_high: float = 0.3
    mar_target_rate: float = 0.2
    mar_anchor_cols: tuple[int, ...] = (0,)
    mnar_a: float = 2.0
    mnar_b: float = -1.5
    seed: int = 0
    allow_compounding: bool = False

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ContractError(f"unknown mechanism {self.mechanism!r}")
        for r in (self.mcar_rate_low, self.mcar_rate_high, self.mar_target_rate):
            if not 0.0 <= r <= 1.0:
                raise ContractError(f"rate {r} outside [0, 1]")
        if self.mcar_rate_low > self.mcar_rate_high:
            raise ContractError("mcar_rate_low must be <= mcar_rate_high")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass
class CurriculumSchedule:
    """Epoch-fraction boundaries for the MCAR -> MAR -> MNAR progression."""

    fractions: tuple[float, float, float] = (0.30, 0.50, 0.20)

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions) \
                or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ContractError(
                f"phase fractions must be positive and sum to 1, got {self.fractions}")


def _check_compounding(x: DataMatrix, spec: MaskingSpec) -> np.ndarray:
    existing = np.isnan(x.values)
    if existing.any() and not spec.allow_compounding:
        raise ContractError(
            "input has pre-existing missing cells; set allow_compounding to stack masks")
    return existing


def _finish(draw_missing: np.ndarray, existing: np.ndarray) -> MaskMatrix:
    return MaskMatrix((~(draw_missing | existing)).astype(np.int8))


def mask_mcar(x: DataMatrix, spec: MaskingSpec,
              rng: np.random.Generator) -> MaskMatrix:
    """One rate p ~ U(low, high) per call; each cell hidden independently."""
    existing = _check_compounding(x, spec)
    p = rng.uniform(spec.mcar_rate_low, spec.mcar_rate_high)
    draw = rng.random(x.values.shape) < p
    return _finish(draw, existing)


def mask_mar(x: DataMatrix, spec: MaskingSpec,
             rng: np.random.Generator) -> MaskMatrix:
    """Column rates proportional to |corr(col, anchor mean)|, rescaled so the
    non-anchor mean rate hits mar_target_rate; anchors are never masked."""
    existing = _check_compounding(x, spec)
    anchors = tuple(spec.mar_anchor_cols)
    if not anchors:
        raise ContractError("MAR requires a nonempty anchor column set")
    n, d = x.values.shape
    anchor_vals = x.values[:, list(anchors)]
    valid = ~np.isnan(anchor_vals)
    counts = valid.sum(axis=1)
    sums = np.where(valid, anchor_vals, 0.0).sum(axis=1)
    anchor_signal = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    rates = np.zeros(d)
    others = [j for j in range(d) if j not in anchors]
    corr = np.zeros(d)
    for j in others:
        col = x.values[:, j]
        ok = ~(np.isnan(col) | np.isnan(anchor_signal))
        if ok.sum() >= 2 and col[ok].std() > 0 and anchor_signal[ok].std() > 0:
            corr[j] = abs(np.corrcoef(col[ok], anchor_signal[ok])[0, 1])
    total = corr[others].sum() if others else 0.0
    if others:
        if total <= 0.0:
            rates[others] = spec.mar_target_rate
        else:
            mean_corr = total / len(others)
            rates[others] = spec.mar_target_rate * corr[others] / mean_corr
    rates = np.clip(rates, 0.0, 0.95)
    draw = rng.random((n, d)) < rates[None, :]
    draw[:, list(anchors)] = False
    return _finish(draw, existing)


def mask_mnar(x: DataMatrix, spec: MaskingSpec,
              rng: np.random.Generator) -> MaskMatrix:
    """Cell (i, j) hidden with probability sigmoid(a * x[i, j] + b)."""
    existing = _check_compounding(x, spec)
    probs = _sigmoid(spec.mnar_a * np.nan_to_num(x.values) + spec.mnar_b)
    draw = rng.random(x.values.shape) < probs
    return _finish(draw, existing)


_MASKERS = {MCAR: mask_mcar, MAR: mask_mar, MNAR: mask_mnar}


def draw_mask(x: DataMatrix, spec: MaskingSpec,
              rng: np.random.Generator) -> MaskMatrix:
    return _MASKERS[spec.mechanism](x, spec, rng)


def phase_for_epoch(sched: CurriculumSchedule, epoch: int,
                    total_epochs: int) -> str:
    """Mechanism scheduled for this epoch under the three-phase curriculum."""
    if not 0 <= epoch < total_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {total_epochs})")
    b1 = int(round(sched.fractions[0] * total_epochs))
    b2 = int(round((sched.fractions[0] + sched.fractions[1]) * total_epochs))
    if epoch < b1:
        return MCAR
    if epoch < b2:
        return MAR
    return MNAR


@dataclass
class CurriculumMasking:
    """Schedule plus the per-mechanism specs used to redraw masks each epoch."""

    schedule: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    mcar: MaskingSpec = field(default_factory=lambda: MaskingSpec(MCAR))
    mar: MaskingSpec = field(default_factory=lambda: MaskingSpec(MAR))
    mnar: MaskingSpec = field(default_factory=lambda: MaskingSpec(MNAR))

    def spec_for_epoch(self, epoch: int, total_epochs: int) -> MaskingSpec:
        mech = phase_for_epoch(self.schedule, epoch, total_epochs)
        return {MCAR: self.mcar, MAR: self.mar, MNAR: self.mnar}[mech]
