"""Framework-free request handlers; the HTTP layer and the CLI both call
these with the same request/response models."""

from __future__ import annotations

import numpy as np

from .. import __version__
from ..data import DataMatrix, LabelVector, MaskMatrix, compute_mask
from ..errors import ContractError
from ..harness import run_benchmark
from ..harness.metrics import auroc, rmse_masked
from ..harness.synth import SynthSpec, synth_generate
from ..masking import CurriculumMasking, CurriculumSchedule, MaskingSpec, draw_mask
from ..model import ModelConfig
from ..routing import PATH_MICE
from ..training import (
    TrainConfig,
    checkpoint_payload,
    impute_with_uncertainty,
    predict_with_uncertainty,
    state_from_payload,
    train,
)
from . import schemas as sc


def _data_matrix(data: sc.Matrix, columns: list[str] | None) -> DataMatrix:
    values = sc.matrix_to_numpy(data)
    names = columns if columns is not None else [f"c{i}" for i in range(values.shape[1])]
    return DataMatrix(values, list(names))


def health() -> sc.HealthResponse:
    return sc.HealthResponse(status="ok", version=__version__)


def do_mask(req: sc.MaskRequest) -> sc.MaskResponse:
    x = _data_matrix(req.data, req.columns)
    has_gaps = bool(np.isnan(x.values).any())
    spec = req.spec.to_spec(seed=req.seed, allow_compounding=has_gaps)
    mask = draw_mask(x, spec, spec.rng())
    hidden = x.values.copy()
    hidden[mask.bits == 0] = np.nan
    return sc.MaskResponse(data=sc.numpy_to_matrix(hidden),
                           mask=mask.bits.tolist())


def do_synth(req: sc.SynthRequest) -> sc.SynthResponse:
    s = req.spec
    spec = SynthSpec(n_rows=s.rows, n_cols=s.cols, corr_kind=s.corr.kind,
                     rho=s.corr.rho, label_weights=s.label_weights,
                     label_bias=s.label_bias, label_noise=s.label_noise)
    x, y = synth_generate(spec, seed=req.seed)
    return sc.SynthResponse(data=sc.numpy_to_matrix(x.values),
                            columns=list(x.column_names),
                            labels=[float(v) for v in y.y])


def _train_config(cfg: sc.TrainServiceConfig) -> TrainConfig:
    t = cfg.train
    cur = cfg.curriculum
    curriculum = CurriculumMasking(
        schedule=CurriculumSchedule(tuple(cur.fractions)),
        mcar=cur.mcar.to_spec() if cur.mcar else MaskingSpec("MCAR"),
        mar=cur.mar.to_spec() if cur.mar else MaskingSpec("MAR"),
        mnar=cur.mnar.to_spec() if cur.mnar else MaskingSpec("MNAR"),
    )
    model_cfg = ModelConfig(
        embed_dim=t.embed_dim, d_k=t.d_k, d_v=t.d_v, d_feat=t.d_feat,
        trunk_hidden=t.trunk_hidden, routing_mode=t.routing_mode,
        tau_gate=t.tau_gate, fusion_mode=t.fusion_mode, variant=cfg.variant,
        dropout=t.dropout, stochastic_inference=t.stochastic_inference,
    )
    return TrainConfig(
        epochs=t.epochs, lr=t.lr, seed=cfg.seed, critic_steps=t.critic_steps,
        mice_refit_every=t.mice_refit_every,
        freeze_reg_weight=t.freeze_reg_weight, k_passes=t.k_passes,
        model=model_cfg, gain=cfg.gain.to_config(cfg.seed),
        mice=cfg.mice.to_config(), curriculum=curriculum,
    )


def do_train(req: sc.TrainRequest) -> sc.TrainResponse:
    x = _data_matrix(req.data, req.columns)
    labels = LabelVector(np.asarray(req.labels)) if req.labels is not None else None
    cfg = _train_config(req.config)
    state = train(x, labels, cfg)
    # fit the statistical branch on the training data so the checkpoint
    # can impute immediately
    if state.model.cfg.variant != "no-mice-path":
        child = np.random.default_rng(int(state.rng.integers(2 ** 63)))
        state.model.fit_mice(x, compute_mask(x), child)
    return sc.TrainResponse(checkpoint=checkpoint_payload(state, x.n_cols),
                            history=state.history)


def do_impute(req: sc.ImputeRequest) -> sc.ImputeResponse:
    state = state_from_payload(req.checkpoint)
    x = _data_matrix(req.data, req.columns)
    if x.n_cols != req.checkpoint.get("n_features"):
        raise ContractError(
            f"column count {x.n_cols} does not match the checkpoint "
            f"({req.checkpoint.get('n_features')})")
    mask = compute_mask(x)
    result = impute_with_uncertainty(state, x, mask, k=req.k_passes)
    est = predict_with_uncertainty(state, x, mask, k=req.k_passes)
    decisions = state.model.decisions(mask)
    frac_mice = float(np.mean([d.path == PATH_MICE for d in decisions])) \
        if decisions else 0.0
    return sc.ImputeResponse(
        imputed=sc.numpy_to_matrix(result.values),
        provenance=[list(row) for row in result.provenance],
        uncertainty=sc.numpy_to_matrix(result.uncertainty),
        path_fractions={"mice": frac_mice, "gain": 1.0 - frac_mice},
        predictions=[float(v) for v in est.mean],
        prediction_variance=[float(v) for v in est.variance],
    )


def do_evaluate(req: sc.EvaluateRequest) -> sc.EvaluateResponse:
    truth = sc.matrix_to_numpy(req.truth)
    imputed = sc.matrix_to_numpy(req.imputed)
    mask = MaskMatrix(np.asarray(req.mask))
    rmse = rmse_masked(truth, imputed, mask)
    roc = None
    if req.labels is not None and req.scores is not None:
        roc = auroc(np.asarray(req.labels), np.asarray(req.scores))
    return sc.EvaluateResponse(rmse=rmse, auroc=roc)


def do_benchmark(req: sc.BenchmarkRequest) -> sc.BenchmarkResponse:
    report = run_benchmark(req.config)
    return sc.BenchmarkResponse(report=report.to_dict())
