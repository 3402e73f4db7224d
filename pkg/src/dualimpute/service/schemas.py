"""Request/response models for the HTTP service. Matrices travel inline
as nested lists with null marking a missing cell."""

from __future__ import annotations

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..harness.config import (
    CurriculumSection,
    GainSection,
    MaskSpecConfig,
    MiceSection,
    RunConfig,
    SynthDataset,
    TrainSection,
)

Matrix = list[list[Optional[float]]]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


def matrix_to_numpy(data: Matrix) -> np.ndarray:
    return np.array([[np.nan if v is None else float(v) for v in row]
                     for row in data], dtype=np.float64)


def numpy_to_matrix(values: np.ndarray) -> Matrix:
    out: Matrix = []
    for row in np.asarray(values, dtype=np.float64):
        out.append([None if np.isnan(v) else float(v) for v in row])
    return out


class HealthResponse(StrictModel):
    status: str
    version: str


class MaskRequest(StrictModel):
    data: Matrix
    columns: Optional[list[str]] = None
    spec: MaskSpecConfig = MaskSpecConfig()
    seed: int = 0


class MaskResponse(StrictModel):
    data: Matrix
    mask: list[list[int]]


class SynthRequest(StrictModel):
    spec: SynthDataset = SynthDataset()
    seed: int = 0


class SynthResponse(StrictModel):
    data: Matrix
    columns: list[str]
    labels: list[float]


class TrainServiceConfig(StrictModel):
    seed: int = 0
    variant: str = "full"
    train: TrainSection = TrainSection()
    gain: GainSection = GainSection()
    mice: MiceSection = MiceSection()
    curriculum: CurriculumSection = CurriculumSection()


class TrainRequest(StrictModel):
    data: Matrix
    columns: Optional[list[str]] = None
    labels: Optional[list[float]] = None
    config: TrainServiceConfig = TrainServiceConfig()


class TrainResponse(StrictModel):
    checkpoint: dict
    history: list[dict]


class ImputeRequest(StrictModel):
    checkpoint: dict
    data: Matrix
    columns: Optional[list[str]] = None
    k_passes: int = 1


class ImputeResponse(StrictModel):
    imputed: Matrix
    provenance: list[list[str]]
    uncertainty: Matrix
    path_fractions: dict[str, float]
    predictions: list[float]
    prediction_variance: list[float]


class EvaluateRequest(StrictModel):
    truth: Matrix
    imputed: Matrix
    mask: list[list[int]]
    labels: Optional[list[float]] = None
    scores: Optional[list[float]] = None


class EvaluateResponse(StrictModel):
    rmse: Optional[float] = None
    auroc: Optional[float] = None


class BenchmarkRequest(StrictModel):
    config: RunConfig


class BenchmarkResponse(StrictModel):
    report: dict
