"""End-to-end joint training: curriculum masking, multi-task loss with
learned per-component scales, checkpointing, and Monte Carlo uncertainty.

The three loss components are weighted by 1/(2*sigma_i^2) with learnable
log-scales; the sum of log-scales joins the objective so no weight can
run away. Everything stochastic flows through one generator owned by the
TrainState, which makes checkpoint-resume replay the uninterrupted run
exactly.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nm
from .data import DataMatrix, ImputationResult, LabelVector, MaskMatrix
from .errors import ConfigError, ContractError, NumericalError
from .gain import GainConfig
from .masking import (
    CurriculumMasking,
    CurriculumSchedule,
    MaskingSpec,
    draw_mask,
)
from .mice import MiceConfig, MiceModel
from .model import DualPathModel, ModelConfig
from .numerics import Adam, Tensor

__all__ = ["LossWeights", "joint_loss", "masked_reconstruction_loss",
           "TrainConfig", "TrainState", "UncertaintyEstimate", "train",
           "predict_with_uncertainty", "impute_with_uncertainty",
           "save_checkpoint", "load_checkpoint", "summarize_passes"]

EMA_DECAY = 0.99


class LossWeights:
    """Learnable log-scales s_i = log sigma_i, one per loss component.

    Active components contribute 0.5*exp(-2*s_i)*L_i + s_i; frozen ones
    keep their current weight as a constant with no log-scale term.
    """

    def __init__(self, components=("imp", "task", "reg"), frozen=()):
        self.s: dict[str, Tensor] = {c: Tensor(np.zeros(())) for c in components}
        self.frozen = set(frozen)

    def lambda_value(self, component: str) -> float:
        return float(0.5 * np.exp(-2.0 * self.s[component].data.reshape(())))

    def sigma(self, component: str) -> float:
        return float(np.exp(self.s[component].data.reshape(())))

    def parameters(self) -> dict[str, Tensor]:
        return {f"loss_s.{c}": t for c, t in self.s.items()
                if c not in self.frozen}

    def load(self, flat: dict[str, Tensor]) -> None:
        for name, tensor in flat.items():
            if name.startswith("loss_s."):
                self.s[name.split(".", 1)[1]] = tensor


def joint_loss(l_imp: Tensor | None, l_task: Tensor | None,
               l_reg: Tensor | None, w: LossWeights) -> Tensor:
    """Weighted multi-task objective plus the log-scale regularizer.

    Components passed as None are excluded (their weight is frozen at 0).
    """
    parts = {"imp": l_imp, "task": l_task, "reg": l_reg}
    total: Tensor | None = None
    for name, loss in parts.items():
        if loss is None:
            continue
        val = loss.item()
        if not np.isfinite(val):
            raise NumericalError(f"{name} loss is not finite: {val}")
        if val < 0:
            raise ContractError(f"{name} loss must be >= 0, got {val}")
        s = w.s[name]
        if name in w.frozen:
            term = nm.mul_const(loss, w.lambda_value(name))
        else:
            lam = nm.mul_const(nm.exp(nm.mul_const(s, -2.0)), 0.5)
            term = nm.add(nm.mul(nm.reshape(lam, ()), nm.reshape(loss, ())),
                          nm.reshape(s, ()))
        term = nm.reshape(term, ())
        total = term if total is None else nm.add(total, term)
    if total is None:
        raise ContractError("joint_loss needs at least one component")
    return total


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    seed: int = 0
    critic_steps: int = 0            # adversarial phase per epoch; 0 = off
    mice_refit_every: int = 1
    freeze_reg_weight: bool = False
    k_passes: int = 10
    model: ModelConfig = field(default_factory=ModelConfig)
    gain: GainConfig = field(default_factory=GainConfig)
    mice: MiceConfig = field(default_factory=MiceConfig)
    curriculum: CurriculumMasking = field(default_factory=CurriculumMasking)


def masked_reconstruction_loss(truth: np.ndarray, imputed: Tensor,
                               bits: np.ndarray) -> Tensor:
    """Squared error over hidden cells, averaged over their count.

    Exactly zero when the reconstruction matches the truth on every
    hidden cell."""
    miss = bits == 0
    count = int(miss.sum())
    w_mask = Tensor(miss.astype(np.float64))
    resid = nm.mul(nm.sub(Tensor(np.nan_to_num(truth)), imputed), w_mask)
    return nm.mul_const(nm.sum_all(nm.mul(resid, resid)),
                        1.0 / max(count, 1))


@dataclass
class UncertaintyEstimate:
    mean: np.ndarray
    variance: np.ndarray
    k: int


def summarize_passes(passes: list[np.ndarray]) -> UncertaintyEstimate:
    """Mean and population variance over stochastic prediction passes.

    Passes are combined in index order, fixing the summation order."""
    if not passes:
        raise ContractError("need at least one pass")
    stacked = np.stack(passes, axis=0)
    if all(np.array_equal(p, passes[0]) for p in passes[1:]):
        # identical passes: exactly zero spread, no mean-rounding residue
        return UncertaintyEstimate(passes[0].copy(),
                                   np.zeros_like(passes[0]), len(passes))
    mean = stacked.mean(axis=0)
    var = np.mean((stacked - mean) ** 2, axis=0)
    return UncertaintyEstimate(mean, var, len(passes))


class TrainState:
    """Everything needed to continue or serve a training run."""

    def __init__(self, model: DualPathModel, weights: LossWeights,
                 cfg: TrainConfig):
        self.model = model
        self.weights = weights
        self.cfg = cfg
        self.opt_joint = Adam(cfg.lr)
        self.opt_critic = Adam(cfg.gain.lr, cfg.gain.beta1, cfg.gain.beta2)
        self.epoch = 0
        self.rng = np.random.default_rng(cfg.seed)
        self.history: list[dict] = []
        self.ema_c_imp = 0.0
        self.ema_c_task = 0.0

    def joint_parameters(self) -> dict[str, Tensor]:
        params = self.model.parameters(include_critic=False)
        params.update(self.weights.parameters())
        return params

    def load_joint_parameters(self, flat: dict[str, Tensor]) -> None:
        self.model.load_parameters(flat)
        self.weights.load(flat)


def _build_state(n_features: int, cfg: TrainConfig) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    model = DualPathModel(n_features, cfg.model, cfg.gain, cfg.mice, rng)
    frozen = {"reg"} if cfg.freeze_reg_weight else set()
    weights = LossWeights(frozen=frozen)
    state = TrainState(model, weights, cfg)
    state.rng = rng
    return state


def train(x: DataMatrix, labels: LabelVector | None, cfg: TrainConfig,
          state: TrainState | None = None,
          stop_after: int | None = None) -> TrainState:
    """Joint optimization over curriculum-masked epochs.

    Requires fully observed training data (the curriculum needs ground
    truth everywhere). Without labels the task component is dropped and
    training is imputation-only. `stop_after` interrupts the planned
    cfg.epochs run early (for checkpointing); passing a loaded `state`
    resumes it, reproducing the uninterrupted run exactly in
    single-threaded mode.
    """
    if np.isnan(x.values).any():
        raise ContractError("training data must be fully observed")
    if labels is not None and len(labels) != x.n_rows:
        raise ContractError("label count must match row count")

    if state is None:
        state = _build_state(x.n_cols, cfg)
    model = state.model
    weights = state.weights
    values = x.values
    y = labels.y if labels is not None else None
    have_labels = y is not None
    last_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)

    while state.epoch < last_epoch:
        epoch = state.epoch
        spec = cfg.curriculum.spec_for_epoch(epoch, cfg.epochs)
        mask = draw_mask(x, spec, state.rng)
        masked = DataMatrix(np.where(mask.bits == 1, values, np.nan),
                            list(x.column_names), list(x.column_kinds))

        mice_fill = None
        if model.cfg.variant != "no-mice-path" and \
                epoch % max(cfg.mice_refit_every, 1) == 0:
            child = np.random.default_rng(int(state.rng.integers(2 ** 63)))
            mice_fill = model.fit_mice(masked, mask, child)
        if mice_fill is None:
            mice_fill = model.mice_fill(masked, mask)

        # adversarial phase: critic updates against fresh generator draws
        critic_val = None
        if cfg.critic_steps > 0 and model.cfg.variant != "no-gain-path":
            from .gain import _critic_grads

            for _ in range(cfg.critic_steps):
                with nm.no_record():
                    fwd = model.forward(masked, mask, state.rng,
                                        epoch / max(cfg.epochs, 1),
                                        mice_fill_values=mice_fill,
                                        truth=values, y=y)
                    x_fake = fwd.gain_fill
                critic_val, grads = _critic_grads(
                    model.discriminator, values, x_fake, mask.bits,
                    cfg.gain, state.rng)
                if not np.isfinite(critic_val):
                    raise NumericalError(
                        f"critic loss diverged at epoch {epoch}")
                model.discriminator.params = state.opt_critic.step(
                    model.discriminator.params, grads)

        t_norm = epoch / max(cfg.epochs, 1)
        names = sorted(state.joint_parameters())
        with nm.tape():
            fwd = model.forward(masked, mask, state.rng, t_norm,
                                mice_fill_values=mice_fill,
                                truth=values, y=y)
            l_imp = masked_reconstruction_loss(values, fwd.imputed, mask.bits)
            l_task = None
            if have_labels:
                l_task = nm.bce_with_logits(nm.reshape(fwd.y_logits, (-1,)),
                                            Tensor(y))
            # squared weight norm, scaled to a per-coordinate mean so the
            # component is commensurate with the other O(1) losses
            reg_terms = []
            n_coords = 0
            for nme, t in sorted(state.joint_parameters().items()):
                if nme.startswith("loss_s."):
                    continue
                reg_terms.append(nm.sum_all(nm.mul(t, t)))
                n_coords += t.size
            l_reg = reg_terms[0]
            for t in reg_terms[1:]:
                l_reg = nm.add(l_reg, t)
            l_reg = nm.mul_const(l_reg, 1.0 / max(n_coords, 1))
            loss = joint_loss(l_imp, l_task, l_reg, weights)
            if cfg.critic_steps > 0 and model.cfg.variant != "no-gain-path":
                adv = nm.neg(nm.mean_all(model.discriminator.forward(
                    Tensor(fwd.gain_fill), mask.bits)))
                loss = nm.add(loss, nm.reshape(adv, ()))
            params = state.joint_parameters()
            grads = nm.backward(loss, [params[k] for k in names])

        total = loss.item()
        if not np.isfinite(total):
            raise NumericalError(f"joint loss diverged at epoch {epoch}")
        new_params = state.opt_joint.step(params, dict(zip(names, grads)))
        state.load_joint_parameters(new_params)

        state.ema_c_imp = EMA_DECAY * state.ema_c_imp + (1 - EMA_DECAY) * fwd.c_imp
        state.ema_c_task = EMA_DECAY * state.ema_c_task + (1 - EMA_DECAY) * fwd.c_task
        record = {
            "epoch": epoch,
            "mechanism": spec.mechanism,
            "total": total,
            "l_imp": l_imp.item(),
            "l_task": l_task.item() if l_task is not None else None,
            "l_reg": l_reg.item(),
            "lambda_imp": weights.lambda_value("imp"),
            "lambda_task": weights.lambda_value("task"),
            "lambda_reg": weights.lambda_value("reg"),
            "lam_fusion": fwd.lam.item() if fwd.lam is not None else None,
        }
        if critic_val is not None:
            record["critic"] = critic_val
        state.history.append(record)
        state.epoch += 1
    return state


def _inference_forward(state: TrainState, x: DataMatrix, m: MaskMatrix,
                       rng: np.random.Generator | None):
    stochastic = state.model.cfg.stochastic_inference
    with nm.no_record():
        return state.model.forward(
            x, m, rng if stochastic else None, 1.0,
            ema_c_imp=state.ema_c_imp, ema_c_task=state.ema_c_task)


def predict_with_uncertainty(state: TrainState, x: DataMatrix, m: MaskMatrix,
                             k: int) -> UncertaintyEstimate:
    """K stochastic passes over the task prediction; population variance."""
    if k < 1:
        raise ContractError("k must be >= 1")
    rng = np.random.default_rng(int(state.rng.integers(2 ** 63))) \
        if state.model.cfg.stochastic_inference else None
    passes = []
    for _ in range(k):
        fwd = _inference_forward(state, x, m, rng)
        passes.append(fwd.y_prob.data.ravel().copy())
    return summarize_passes(passes)


def impute_with_uncertainty(state: TrainState, x: DataMatrix, m: MaskMatrix,
                            k: int = 1) -> ImputationResult:
    """Impute and attach per-cell variance across K stochastic passes."""
    if k < 1:
        raise ContractError("k must be >= 1")
    rng = np.random.default_rng(int(state.rng.integers(2 ** 63))) \
        if state.model.cfg.stochastic_inference else None
    fills = []
    result = None
    for _ in range(k):
        fwd = _inference_forward(state, x, m, rng)
        result = state.model.compose_inference(x, m, fwd)
        fills.append(result.values.copy())
    est = summarize_passes(fills)
    values = est.mean
    # every pass reproduces observed cells exactly; keep them bit-for-bit
    obs = m.bits == 1
    values[obs] = result.values[obs]
    uncertainty = est.variance
    uncertainty[obs] = 0.0
    return ImputationResult(values, result.provenance, uncertainty)


# ---------------------------------------------------------------------------
# checkpoint container (versioned JSON; tensors as little-endian base64)


def _enc(arr: np.ndarray) -> dict:
    a = np.asarray(arr, dtype="<f8")
    return {"shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(spec: dict) -> np.ndarray:
    raw = base64.b64decode(spec["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(spec["shape"]).copy()


def _enc_adam(opt: Adam) -> dict:
    st = opt.state_dict()
    st["m"] = {k: _enc(v) for k, v in st["m"].items()}
    st["v"] = {k: _enc(v) for k, v in st["v"].items()}
    return st


def _dec_adam(spec: dict) -> Adam:
    opt = Adam()
    spec = dict(spec)
    spec["m"] = {k: _dec(v) for k, v in spec["m"].items()}
    spec["v"] = {k: _dec(v) for k, v in spec["v"].items()}
    opt.load_state_dict(spec)
    return opt


def _enc_mice(model: MiceModel | None) -> dict | None:
    if model is None:
        return None
    return {
        "coef": {str(k): _enc(v) for k, v in model.coef.items()},
        "intercept": {str(k): float(v) for k, v in model.intercept.items()},
        "visit_order": list(model.visit_order),
        "col_means": _enc(model.col_means),
        "ridge": model.ridge,
        "transform_sweeps": model.transform_sweeps,
        "cv_loss_trace": list(model.cv_loss_trace),
        "stopped_at": model.stopped_at,
    }


def _dec_mice(spec: dict | None) -> MiceModel | None:
    if spec is None:
        return None
    return MiceModel(
        coef={int(k): _dec(v) for k, v in spec["coef"].items()},
        intercept={int(k): float(v) for k, v in spec["intercept"].items()},
        visit_order=list(spec["visit_order"]),
        col_means=_dec(spec["col_means"]),
        ridge=spec["ridge"],
        transform_sweeps=spec["transform_sweeps"],
        cv_loss_trace=list(spec["cv_loss_trace"]),
        stopped_at=spec["stopped_at"],
    )


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def config_from_dict(raw: dict) -> TrainConfig:
    raw = dict(raw)
    raw["model"] = ModelConfig(**raw["model"])
    raw["gain"] = GainConfig(**{**raw["gain"],
                                "hidden": tuple(raw["gain"]["hidden"])})
    raw["mice"] = MiceConfig(**raw["mice"])
    cur = raw["curriculum"]
    raw["curriculum"] = CurriculumMasking(
        schedule=CurriculumSchedule(tuple(cur["schedule"]["fractions"])),
        mcar=MaskingSpec(**{**cur["mcar"],
                            "mar_anchor_cols": tuple(cur["mcar"]["mar_anchor_cols"])}),
        mar=MaskingSpec(**{**cur["mar"],
                           "mar_anchor_cols": tuple(cur["mar"]["mar_anchor_cols"])}),
        mnar=MaskingSpec(**{**cur["mnar"],
                            "mar_anchor_cols": tuple(cur["mnar"]["mar_anchor_cols"])}),
    )
    return TrainConfig(**raw)


def checkpoint_payload(state: TrainState, n_features: int) -> dict:
    params = state.model.parameters(include_critic=True)
    params.update(state.weights.parameters())
    return {
        "format": "dualimpute-checkpoint",
        "version": 1,
        "n_features": n_features,
        "epoch": state.epoch,
        "rng_state": state.rng.bit_generator.state,
        "tensors": {k: _enc(t.data) for k, t in sorted(params.items())},
        "adam_joint": _enc_adam(state.opt_joint),
        "adam_critic": _enc_adam(state.opt_critic),
        "ema": {"c_imp": state.ema_c_imp, "c_task": state.ema_c_task},
        "history": state.history,
        "mice": _enc_mice(state.model.mice_model),
        "config": config_to_dict(state.cfg),
    }


def state_from_payload(payload: dict) -> TrainState:
    if payload.get("format") != "dualimpute-checkpoint":
        raise ConfigError("not a checkpoint file")
    if payload.get("version") != 1:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = config_from_dict(payload["config"])
    state = _build_state(payload["n_features"], cfg)
    tensors = {k: Tensor(_dec(v)) for k, v in payload["tensors"].items()}
    state.model.load_parameters(tensors)
    state.weights.load(tensors)
    state.opt_joint = _dec_adam(payload["adam_joint"])
    state.opt_critic = _dec_adam(payload["adam_critic"])
    state.epoch = payload["epoch"]
    state.rng = np.random.default_rng()
    state.rng.bit_generator.state = payload["rng_state"]
    state.ema_c_imp = payload["ema"]["c_imp"]
    state.ema_c_task = payload["ema"]["c_task"]
    state.history = list(payload["history"])
    state.model.mice_model = _dec_mice(payload["mice"])
    return state


def save_checkpoint(state: TrainState, path, n_features: int) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_payload(state, n_features), fh, sort_keys=True)


def load_checkpoint(path) -> TrainState:
    with open(path) as fh:
        return state_from_payload(json.load(fh))
