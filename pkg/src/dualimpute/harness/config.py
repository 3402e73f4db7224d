"""Run configuration: strict pydantic schema (unknown keys rejected) and
translation into the core dataclasses."""

from __future__ import annotations

import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from ..errors import ConfigError
from ..gain import GainConfig
from ..masking import CurriculumMasking, CurriculumSchedule, MaskingSpec
from ..mice import MiceConfig
from ..model import ModelConfig
from ..training import TrainConfig

__all__ = [
    "RunConfig",
    "MaskSpecConfig",
    "MaskingConfig",
    "MethodConfig",
    "load_run_config",
    "run_config_from_dict",
    "build_train_config",
    "resolve_curriculum",
]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CorrConfig(StrictModel):
    kind: Literal["ar1", "exchangeable", "identity"] = "ar1"
    rho: float = 0.6


class SynthDataset(StrictModel):
    rows: int = 1000
    cols: int = 8
    corr: CorrConfig = CorrConfig()
    label_weights: Optional[list[float]] = None
    label_bias: float = 0.0
    label_noise: float = 1.0


class CsvDataset(StrictModel):
    path: str
    label_col: Optional[str] = None


class DatasetConfig(StrictModel):
    synth: Optional[SynthDataset] = None
    csv: Optional[CsvDataset] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.synth is None) == (self.csv is None):
            raise ValueError("dataset needs exactly one of synth or csv")
        return self


class MaskSpecConfig(StrictModel):
    mechanism: Literal["MCAR", "MAR", "MNAR"] = "MCAR"
    mcar_rate_low: float = 0.1
    mcar_rate_high: float = 0.3
    mar_target_rate: float = 0.2
    mar_anchor_cols: list[int] = [0]
    mnar_a: float = 2.0
    mnar_b: float = -1.5

    def to_spec(self, seed: int = 0,
                allow_compounding: bool = False) -> MaskingSpec:
        return MaskingSpec(
            mechanism=self.mechanism,
            mcar_rate_low=self.mcar_rate_low,
            mcar_rate_high=self.mcar_rate_high,
            mar_target_rate=self.mar_target_rate,
            mar_anchor_cols=tuple(self.mar_anchor_cols),
            mnar_a=self.mnar_a,
            mnar_b=self.mnar_b,
            seed=seed,
            allow_compounding=allow_compounding,
        )


class MixtureComponent(StrictModel):
    fraction: float
    spec: MaskSpecConfig


class MaskingConfig(StrictModel):
    spec: Optional[MaskSpecConfig] = None
    mixture: Optional[list[MixtureComponent]] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.spec is None) == (self.mixture is None):
            raise ValueError("masking needs exactly one of spec or mixture")
        if self.mixture is not None:
            total = sum(c.fraction for c in self.mixture)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"mixture fractions must sum to 1, got {total}")
        return self


class SplitConfig(StrictModel):
    train: float = 0.7
    val: float = 0.15
    test: float = 0.15


VARIANT_NAMES = ("full", "static-fusion-0.5", "no-adaptive-fusion",
                 "no-mice-path", "no-gain-path")


class MethodConfig(StrictModel):
    name: Literal["mean", "mice", "gain", "dual"]
    variant: Literal[VARIANT_NAMES] = "full"

    def label(self) -> str:
        if self.name == "dual" and self.variant != "full":
            return f"dual:{self.variant}"
        return self.name


class MiceSection(StrictModel):
    ridge: float = 1e-3
    max_iterations: int = 10
    stall_patience: int = 2
    cv_fraction: float = 0.1
    top_k: int = 8
    transform_sweeps: int = 3

    def to_config(self) -> MiceConfig:
        return MiceConfig(ridge=self.ridge, max_iterations=self.max_iterations,
                          stall_patience=self.stall_patience,
                          cv_fraction=self.cv_fraction, top_k=self.top_k,
                          transform_sweeps=self.transform_sweeps)


class GainSection(StrictModel):
    epochs: int = 100
    critic_steps: int = 5
    gp_weight: float = 10.0
    recon_weight: float = 10.0
    lr: float = 1e-3
    hidden: list[int] = [48, 48]
    attn_dim: int = 8
    noise_dim: int = 1
    noise_fill_scale: float = 0.1
    penalty_grad_mode: Literal["exact", "finite_diff"] = "exact"

    def to_config(self, seed: int = 0) -> GainConfig:
        return GainConfig(
            noise_dim=self.noise_dim, attn_dim=self.attn_dim,
            hidden=tuple(self.hidden), gp_weight=self.gp_weight,
            recon_weight=self.recon_weight, critic_steps=self.critic_steps,
            lr=self.lr, epochs=self.epochs, seed=seed,
            noise_fill_scale=self.noise_fill_scale,
            penalty_grad_mode=self.penalty_grad_mode,
        )


class TrainSection(StrictModel):
    epochs: int = 60
    lr: float = 1e-3
    critic_steps: int = 0
    embed_dim: int = 16
    d_k: int = 16
    d_v: int = 16
    d_feat: int = 16
    trunk_hidden: int = 16
    routing_mode: Literal["fixed", "learned"] = "fixed"
    tau_gate: float = 0.5
    fusion_mode: Literal["routed", "fused", "static:0.5"] = "fused"
    dropout: float = 0.0
    stochastic_inference: bool = True
    k_passes: int = 10
    mice_refit_every: int = 1
    freeze_reg_weight: bool = False
    max_train_rows: Optional[int] = None


class CurriculumSection(StrictModel):
    fractions: list[float] = [0.30, 0.50, 0.20]
    mcar: Optional[MaskSpecConfig] = None
    mar: Optional[MaskSpecConfig] = None
    mnar: Optional[MaskSpecConfig] = None


class OutputConfig(StrictModel):
    report_json: Optional[str] = None
    report_csv: Optional[str] = None


class RunConfig(StrictModel):
    seed: int = 0
    threads: int = 1
    dataset: DatasetConfig
    masking: MaskingConfig = MaskingConfig(spec=MaskSpecConfig())
    split: SplitConfig = SplitConfig()
    methods: list[MethodConfig] = [
        MethodConfig(name="mean"), MethodConfig(name="mice"),
        MethodConfig(name="gain"), MethodConfig(name="dual"),
    ]
    mice: MiceSection = MiceSection()
    gain: GainSection = GainSection()
    train: TrainSection = TrainSection()
    curriculum: CurriculumSection = CurriculumSection()
    output: OutputConfig = OutputConfig()


def run_config_from_dict(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return run_config_from_dict(raw)


def resolve_curriculum(rc: RunConfig) -> CurriculumMasking:
    """Curriculum specs; phases missing from the config inherit matching
    components of the benchmark masking so training matches deployment."""
    by_mech: dict[str, MaskSpecConfig] = {}
    if rc.masking.spec is not None:
        by_mech[rc.masking.spec.mechanism] = rc.masking.spec
    else:
        for comp in rc.masking.mixture:
            by_mech.setdefault(comp.spec.mechanism, comp.spec)

    def pick(section: Optional[MaskSpecConfig], mech: str) -> MaskingSpec:
        if section is not None:
            return section.to_spec()
        if mech in by_mech:
            spec = by_mech[mech].to_spec()
            if spec.mechanism != mech:
                spec.mechanism = mech
            return spec
        return MaskingSpec(mech)

    return CurriculumMasking(
        schedule=CurriculumSchedule(tuple(rc.curriculum.fractions)),
        mcar=pick(rc.curriculum.mcar, "MCAR"),
        mar=pick(rc.curriculum.mar, "MAR"),
        mnar=pick(rc.curriculum.mnar, "MNAR"),
    )


def build_train_config(rc: RunConfig, seed: int, variant: str) -> TrainConfig:
    t = rc.train
    model_cfg = ModelConfig(
        embed_dim=t.embed_dim, d_k=t.d_k, d_v=t.d_v, d_feat=t.d_feat,
        trunk_hidden=t.trunk_hidden, routing_mode=t.routing_mode,
        tau_gate=t.tau_gate, fusion_mode=t.fusion_mode, variant=variant,
        dropout=t.dropout, stochastic_inference=t.stochastic_inference,
    )
    return TrainConfig(
        epochs=t.epochs, lr=t.lr, seed=seed, critic_steps=t.critic_steps,
        mice_refit_every=t.mice_refit_every,
        freeze_reg_weight=t.freeze_reg_weight, k_passes=t.k_passes,
        model=model_cfg, gain=rc.gain.to_config(seed),
        mice=rc.mice.to_config(), curriculum=resolve_curriculum(rc),
    )
