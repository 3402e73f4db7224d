"""Dual-path missing-data imputation with learned routing and fusion."""

__version__ = "0.1.0"

from .data import (
    DataMatrix,
    ImputationResult,
    LabelVector,
    MaskMatrix,
    apply_mask,
    compute_mask,
    fit_normalizer,
    load_csv,
    save_csv,
    split,
)
from .errors import ConfigError, ContractError, DataError, NumericalError
from .masking import (
    CurriculumMasking,
    CurriculumSchedule,
    MaskingSpec,
    draw_mask,
    mask_mar,
    mask_mcar,
    mask_mnar,
    phase_for_epoch,
)
from .mice import MiceConfig, mice_fit_impute, mice_transform, rank_features
from .gain import GainConfig, gain_impute, gain_train
from .model import DualPathModel, ModelConfig
from .routing import GateNetwork, MissingnessEmbedder, missingness_rate, route
from .training import (
    TrainConfig,
    TrainState,
    impute_with_uncertainty,
    load_checkpoint,
    predict_with_uncertainty,
    save_checkpoint,
    train,
)

__all__ = [
    "__version__",
    "DataMatrix", "ImputationResult", "LabelVector", "MaskMatrix",
    "apply_mask", "compute_mask", "fit_normalizer", "load_csv", "save_csv",
    "split",
    "ConfigError", "ContractError", "DataError", "NumericalError",
    "CurriculumMasking", "CurriculumSchedule", "MaskingSpec", "draw_mask",
    "mask_mar", "mask_mcar", "mask_mnar", "phase_for_epoch",
    "MiceConfig", "mice_fit_impute", "mice_transform", "rank_features",
    "GainConfig", "gain_impute", "gain_train",
    "DualPathModel", "ModelConfig",
    "GateNetwork", "MissingnessEmbedder", "missingness_rate", "route",
    "TrainConfig", "TrainState", "impute_with_uncertainty",
    "load_checkpoint", "predict_with_uncertainty", "save_checkpoint",
    "train",
]
