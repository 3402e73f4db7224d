"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with: pytest tests/test_acceptance.py -v -s
The benchmark-backed criteria (8 and 9) share one five-seed run.
"""

import time

import numpy as np
import pytest

import dualimpute.numerics as nm
from dualimpute.data import DataMatrix, LabelVector, MaskMatrix, compute_mask
from dualimpute.gain import Discriminator, GainConfig, critic_loss
from dualimpute.harness import run_benchmark, run_config_from_dict
from dualimpute.masking import (
    MAR,
    MCAR,
    MNAR,
    CurriculumMasking,
    CurriculumSchedule,
    MaskingSpec,
    mask_mar,
    mask_mcar,
    mask_mnar,
    phase_for_epoch,
)
from dualimpute.mice import MiceConfig, mice_fit_impute
from dualimpute.model import ModelConfig
from dualimpute.numerics import Adam, Tensor
from dualimpute.routing import PATH_GAIN, PATH_MICE, missingness_rate, route
from dualimpute.fusion import AdaptiveFusionHead, adaptive_fuse, convex_mix
from dualimpute.training import (
    LossWeights,
    TrainConfig,
    checkpoint_payload,
    joint_loss,
    predict_with_uncertainty,
    summarize_passes,
    train,
)


def announce(num, ok, text):
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {num:>2} {status} - {text}")
    assert ok, f"criterion {num}: {text}"


def dm(values):
    values = np.asarray(values, dtype=np.float64)
    return DataMatrix(values, [f"c{i}" for i in range(values.shape[1])])


def small_train_config(epochs=4, seed=0, **model_kw):
    spec = MaskingSpec(MCAR, mcar_rate_low=0.25, mcar_rate_high=0.25)
    return TrainConfig(
        epochs=epochs, seed=seed,
        model=ModelConfig(embed_dim=4, d_k=4, d_v=4, d_feat=4,
                          trunk_hidden=4, **model_kw),
        gain=GainConfig(hidden=(8, 8), attn_dim=4, seed=seed),
        mice=MiceConfig(max_iterations=3),
        curriculum=CurriculumMasking(mcar=spec, mar=spec, mnar=spec),
    )


def toy_dataset(n=40, d=4, seed=1):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=n)
    values = np.column_stack([base + 0.4 * rng.normal(size=n)
                              for _ in range(d)])
    y = (values @ rng.normal(size=d) + 0.3 * rng.normal(size=n) > 0)
    return dm(values), LabelVector(y.astype(float))


BENCHMARK_SEEDS = (0, 1, 2, 3, 4)


def benchmark_config(seed):
    return run_config_from_dict({
        "seed": seed,
        "dataset": {"synth": {"rows": 5000, "cols": 12,
                              "corr": {"kind": "ar1", "rho": 0.75}}},
        "masking": {"mixture": [
            {"fraction": 0.5, "spec": {"mechanism": "MCAR",
                                       "mcar_rate_low": 0.10,
                                       "mcar_rate_high": 0.10}},
            {"fraction": 0.5, "spec": {"mechanism": "MNAR",
                                       "mnar_a": 3.0, "mnar_b": -0.9}}]},
        "methods": [{"name": "mean"}, {"name": "mice"}, {"name": "gain"},
                    {"name": "dual"},
                    {"name": "dual", "variant": "no-gain-path"}],
        "gain": {"epochs": 80, "critic_steps": 3, "hidden": [48, 48],
                 "attn_dim": 8},
        "train": {"epochs": 60, "max_train_rows": 2000,
                  "fusion_mode": "routed"},
        "mice": {"max_iterations": 8},
    })


@pytest.fixture(scope="module")
def benchmark_runs():
    t0 = time.perf_counter()
    reports = [run_benchmark(benchmark_config(seed))
               for seed in BENCHMARK_SEEDS]
    elapsed = time.perf_counter() - t0
    for rep in reports:
        for label, res in rep.methods.items():
            assert res.error is None, f"{label} failed: {res.error}"
    return reports, elapsed


def test_criterion_01_gradient_integrity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    n, d = 4, 3

    # assembled model: embedder, gate, generator, attention fusion, trunk,
    # adaptive head, and the loss scales, all against central differences
    from dualimpute.model import DualPathModel

    cfg = small_train_config(seed=3)
    model = DualPathModel(d, cfg.model, cfg.gain, cfg.mice,
                          np.random.default_rng(3))
    truth = rng.normal(size=(n, d))
    bits = (rng.random((n, d)) > 0.35).astype(np.int8)
    bits[0] = 1
    values = np.where(bits == 1, truth, np.nan)
    x = dm(values)
    mask = MaskMatrix(bits)
    mice_fill = np.where(bits == 1, truth, 0.1)
    y = Tensor((rng.random(n) > 0.5).astype(np.float64))
    weights = LossWeights()

    def total_loss():
        fwd = model.forward(x, mask, None, 0.5, mice_fill_values=mice_fill,
                            ema_c_imp=0.3, ema_c_task=0.6)
        miss = Tensor((bits == 0).astype(np.float64))
        resid = nm.mul(nm.sub(Tensor(np.nan_to_num(truth)), fwd.imputed), miss)
        l_imp = nm.mul_const(nm.sum_all(nm.mul(resid, resid)),
                             1.0 / max((bits == 0).sum(), 1))
        l_task = nm.bce_with_logits(nm.reshape(fwd.y_logits, (-1,)), y)
        return joint_loss(l_imp, l_task, Tensor(np.asarray(0.17)), weights)

    params = model.parameters(include_critic=False)
    params.update(weights.parameters())
    names = sorted(params)
    with nm.tape():
        loss = total_loss()
        grads = nm.backward(loss, [params[k] for k in names])
    worst = 0.0
    for name, g in zip(names, grads):
        holder, key = (weights.s, name.split(".", 1)[1]) \
            if name.startswith("loss_s.") else (None, None)
        if holder is None:
            group, key = name.split(".", 1)
            holder = {
                "emb": model.embedder.params, "gate": model.gate.params,
                "gen": model.generator.params, "cpa": model.cpa.params,
                "trunk": model.trunk, "head": model.head.params,
            }[group]
        orig = holder[key]

        def f(arr, holder=holder, key=key, orig=orig):
            holder[key] = Tensor(arr)
            try:
                return total_loss().item()
            finally:
                holder[key] = orig

        num = nm.finite_diff(f, orig.data.copy())
        worst = max(worst, nm.max_rel_err(g.data, num))

    # critic, including the second-order gradient-penalty path
    disc = Discriminator(d, cfg.gain, np.random.default_rng(4))
    xr = rng.normal(size=(n, d))
    xf = rng.normal(size=(n, d))
    dnames = sorted(disc.params)
    with nm.tape():
        l_d = critic_loss(disc, Tensor(xr), Tensor(xf), bits, 10.0,
                          rng=np.random.default_rng(11))
        dgrads = nm.backward(l_d, [disc.params[k] for k in dnames])
    for name, g in zip(dnames, dgrads):
        orig = disc.params[name]

        def f(arr, name=name, orig=orig):
            disc.params[name] = Tensor(arr)
            try:
                with nm.tape():
                    return critic_loss(disc, Tensor(xr), Tensor(xf), bits,
                                       10.0, rng=np.random.default_rng(11)).item()
            finally:
                disc.params[name] = orig

        num = nm.finite_diff(f, orig.data.copy())
        worst = max(worst, nm.max_rel_err(g.data, num))

    elapsed = time.perf_counter() - t0
    announce(1, worst < 1e-3 and elapsed < 60.0,
             f"all component gradients within rel 1e-3 of finite differences "
             f"(worst {worst:.2e}) in {elapsed:.1f}s < 60s")


def test_criterion_02_masking_statistics():
    rng = np.random.default_rng(5)
    x = dm(np.zeros((10000, 10)))
    spec = MaskingSpec(MCAR, mcar_rate_low=0.2, mcar_rate_high=0.2, seed=6)
    rate = 1.0 - mask_mcar(x, spec, spec.rng()).bits.mean()
    ok_mcar = abs(rate - 0.2) < 0.01

    values = rng.standard_normal((20000, 6))
    xs = dm(values)
    spec_mnar = MaskingSpec(MNAR, mnar_a=5.0, mnar_b=0.0, seed=7)
    bits = mask_mnar(xs, spec_mnar, spec_mnar.rng()).bits
    rate_hi = (bits[values > 1.0] == 0).mean()
    rate_lo = (bits[values < -1.0] == 0).mean()
    ok_mnar = rate_hi > rate_lo

    xm = dm(rng.standard_normal((4000, 5)))
    spec_mar = MaskingSpec(MAR, mar_target_rate=0.8, mar_anchor_cols=(0, 3),
                           seed=8)
    bits_mar = mask_mar(xm, spec_mar, spec_mar.rng()).bits
    ok_mar = bool(bits_mar[:, 0].all() and bits_mar[:, 3].all())

    announce(2, ok_mcar and ok_mnar and ok_mar,
             f"MCAR rate {rate:.4f} in 0.2+-0.01; MNAR high-cell rate "
             f"{rate_hi:.3f} > low-cell {rate_lo:.3f}; MAR anchors untouched")


def test_criterion_03_curriculum_schedule():
    sched = CurriculumSchedule()
    phases = [phase_for_epoch(sched, e, 100) for e in range(100)]
    ok = (phases[:30] == [MCAR] * 30 and phases[30:80] == [MAR] * 50
          and phases[80:] == [MNAR] * 20)
    announce(3, ok, "epochs 0-29 MCAR, 30-79 MAR, 80-99 MNAR at 30/50/20")


def test_criterion_04_routing_boundary_and_mask_dependence():
    bits19 = np.ones((1, 100), dtype=np.int8)
    bits19[0, :19] = 0
    bits20 = np.ones((1, 100), dtype=np.int8)
    bits20[0, :20] = 0
    mr19 = missingness_rate(MaskMatrix(bits19), scope="per_row")
    mr20 = missingness_rate(MaskMatrix(bits20), scope="per_row")
    (d19,) = route(mr19)
    (d20,) = route(mr20)
    ok_boundary = d19.path == PATH_MICE and d20.path == PATH_GAIN

    rng = np.random.default_rng(9)
    bits = (rng.random((50, 10)) > 0.25).astype(np.int8)
    x1 = np.where(bits == 1, rng.normal(size=(50, 10)), np.nan)
    x2 = np.where(bits == 1, rng.normal(size=(50, 10)) * 100 + 5, np.nan)
    m1 = compute_mask(dm(x1))
    m2 = compute_mask(dm(x2))
    paths1 = [d.path for d in route(missingness_rate(m1, "per_row"))]
    paths2 = [d.path for d in route(missingness_rate(m2, "per_row"))]
    ok_mask_only = paths1 == paths2

    announce(4, ok_boundary and ok_mask_only,
             "MR 0.19 -> MICE, 0.20 -> GAIN; mutating observed values "
             "leaves every routing decision unchanged")


def test_criterion_05_mice_oracle_and_early_stop():
    rng = np.random.default_rng(10)
    n = 400
    x1 = rng.normal(size=n)
    x2 = 3.0 * x1 + 1.0
    vals = np.column_stack([x1, x2])
    hide = rng.random(n) < 0.2
    masked = vals.copy()
    masked[hide, 1] = np.nan
    x = dm(masked)
    cfg = MiceConfig(ridge=1e-8, stall_patience=2, max_iterations=10)
    res, model = mice_fit_impute(x, compute_mask(x), cfg,
                                 np.random.default_rng(11))
    err = np.max(np.abs(res.values[hide, 1] - (3.0 * x1[hide] + 1.0)))
    ok_affine = err < 1e-6

    trace = model.cv_loss_trace
    ok_stopped = 0 < len(trace) < cfg.max_iterations
    ok_stall = True
    for k in range(cfg.stall_patience):
        idx = len(trace) - cfg.stall_patience + k
        best_before = min(trace[:idx])
        if trace[idx] < best_before * (1.0 - cfg.rel_tol):
            ok_stall = False
    announce(5, ok_affine and ok_stopped and ok_stall,
             f"affine law recovered to {err:.2e} < 1e-6; stopped after "
             f"{len(trace)} iterations with a stalled held-out trace")


def test_criterion_06_attention_fusion_algebra():
    rng = np.random.default_rng(12)
    e, steps = 5, 6
    q = Tensor(rng.normal(size=(steps, e)))
    k = Tensor(rng.normal(size=(steps, e)))
    v = Tensor(rng.normal(size=(steps, e)))
    _, w = nm.scaled_attention(q, k, v, bias=nm.causal_bias(steps))
    ok_rows = np.max(np.abs(w.data.sum(axis=-1) - 1.0)) < 1e-9

    from dualimpute.gain import temporal_attention

    h = rng.normal(size=(steps, e))
    ctx = rng.normal(size=(steps, e))
    wq, wk, wv = (Tensor(rng.normal(size=(e, e))) for _ in range(3))
    out1 = temporal_attention(Tensor(h), Tensor(ctx), wq, wk, wv).data
    h2, ctx2 = h.copy(), ctx.copy()
    h2[3:] += 10.0
    ctx2[3:] -= 7.0
    out2 = temporal_attention(Tensor(h2), Tensor(ctx2), wq, wk, wv).data
    ok_causal = np.array_equal(out1[:3], out2[:3])

    head = AdaptiveFusionHead(4, 4, 4, rng=np.random.default_rng(13))
    head.params["w_t"] = Tensor(rng.normal(size=(3, 1)))
    h_imp = Tensor(rng.normal(size=(5, 4)))
    h_task = Tensor(rng.normal(size=(5, 4)))
    _, lam = adaptive_fuse(head, 0.4, 0.8, 0.3, h_imp, h_task)
    mixed = convex_mix(lam, h_imp, h_task)
    lo = np.minimum(h_imp.data, h_task.data)
    hi = np.maximum(h_imp.data, h_task.data)
    ok_convex = (np.all(mixed.data >= lo - 1e-12)
                 and np.all(mixed.data <= hi + 1e-12))

    at_one = convex_mix(Tensor(np.array([[1.0]])), h_imp, h_task).data
    at_zero = convex_mix(Tensor(np.array([[0.0]])), h_imp, h_task).data
    ok_endpoints = (np.array_equal(at_one, h_imp.data)
                    and np.array_equal(at_zero, h_task.data))

    announce(6, ok_rows and ok_causal and ok_convex and ok_endpoints,
             "softmax rows sum to 1; causal future-invariance; convex "
             "mixing; weight 1 -> imputation features, 0 -> task features")


def test_criterion_07_homoscedastic_direction():
    wins = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        w = LossWeights(frozen=("reg",))
        opt = Adam(lr=0.1)
        for _ in range(200):
            l_imp = (0.5 + rng.normal(0.0, 2.0)) ** 2     # variance 4
            l_task = (0.5 + rng.normal(0.0, 0.1)) ** 2    # variance 0.01
            names = sorted(w.parameters())
            with nm.tape():
                loss = joint_loss(Tensor(np.asarray(l_imp)),
                                  Tensor(np.asarray(l_task)),
                                  Tensor(np.asarray(0.0)), w)
                params = w.parameters()
                grads = nm.backward(loss, [params[k] for k in names])
            w.load(opt.step(params, dict(zip(names, grads))))
        if w.lambda_value("imp") < w.lambda_value("task"):
            wins += 1
    announce(7, wins == 10,
             f"noisy component ends with the smaller weight in {wins}/10 seeds")


def test_criterion_08_benchmark_direction(benchmark_runs):
    reports, elapsed = benchmark_runs
    med = lambda key: float(np.median([getattr(r.methods[key], "rmse")
                                       for r in reports]))
    m_mean, m_mice, m_gain = med("mean"), med("mice"), med("gain")
    m_dual = med("dual")
    ok = (m_mean > m_mice and m_mean > m_gain
          and m_dual <= 1.05 * min(m_mice, m_gain)
          and elapsed < 600.0)
    announce(8, ok,
             f"5-seed medians: mean {m_mean:.4f} > mice {m_mice:.4f}, "
             f"mean > gain {m_gain:.4f}, dual {m_dual:.4f} <= 1.05*min; "
             f"runtime {elapsed:.0f}s < 600s")


def test_criterion_09_ablation_direction(benchmark_runs):
    reports, _ = benchmark_runs
    ratios = []
    for rep in reports:
        full = rep.methods["dual"].rmse_by_group["1:MNAR"]
        ablate = rep.methods["dual:no-gain-path"].rmse_by_group["1:MNAR"]
        ratios.append(ablate / full)
    median_ratio = float(np.median(ratios))
    announce(9, median_ratio >= 1.10,
             f"removing the neural path inflates high-MNAR RMSE by "
             f"{100 * (median_ratio - 1):.0f}% (median ratio {median_ratio:.3f} >= 1.10)")


def test_criterion_10_uncertainty_contract():
    est = summarize_passes([np.array([0.0]), np.array([1.0])])
    ok_example = est.mean[0] == 0.5 and est.variance[0] == 0.25

    x, y = toy_dataset(n=24, d=3, seed=20)
    bits = np.ones(x.values.shape, dtype=np.int8)
    bits[:10, 1] = 0
    masked = dm(np.where(bits == 1, x.values, np.nan))
    m = MaskMatrix(bits)

    state = train(x, y, small_train_config(epochs=2, seed=21))
    est1 = predict_with_uncertainty(state, masked, m, k=1)
    ok_k1 = np.array_equal(est1.variance, np.zeros(x.n_rows))
    est6 = predict_with_uncertainty(state, masked, m, k=6)
    ok_nonneg = bool(np.all(est6.variance >= 0.0))

    det = train(x, y, small_train_config(epochs=2, seed=22,
                                         stochastic_inference=False))
    est7 = predict_with_uncertainty(det, masked, m, k=7)
    ok_det = np.array_equal(est7.variance, np.zeros(x.n_rows))

    announce(10, ok_example and ok_k1 and ok_nonneg and ok_det,
             "two-pass {0,1} gives exactly (0.5, 0.25); K=1 and "
             "deterministic configs give zero variance; variance >= 0")


def test_criterion_11_determinism_and_resume(tmp_path):
    import json

    x, y = toy_dataset(n=30, d=3, seed=23)
    s1 = train(x, y, small_train_config(epochs=6, seed=24))
    s2 = train(x, y, small_train_config(epochs=6, seed=24))
    ck1 = json.dumps(checkpoint_payload(s1, x.n_cols), sort_keys=True)
    ck2 = json.dumps(checkpoint_payload(s2, x.n_cols), sort_keys=True)
    ok_checkpoint = ck1 == ck2

    half = train(x, y, small_train_config(epochs=6, seed=24), stop_after=3)
    from dualimpute.training import load_checkpoint, save_checkpoint

    path = tmp_path / "mid.json"
    save_checkpoint(half, path, x.n_cols)
    resumed = train(x, y, load_checkpoint(path).cfg,
                    state=load_checkpoint(path))
    p_full = s1.model.parameters(include_critic=True)
    p_res = resumed.model.parameters(include_critic=True)
    ok_resume = all(np.array_equal(p_full[k].data, p_res[k].data)
                    for k in p_full)

    def tiny_report():
        rc = run_config_from_dict({
            "seed": 31,
            "dataset": {"synth": {"rows": 150, "cols": 4}},
            "masking": {"spec": {"mechanism": "MCAR", "mcar_rate_low": 0.2,
                                 "mcar_rate_high": 0.2}},
            "methods": [{"name": "mean"}, {"name": "mice"}],
            "mice": {"max_iterations": 3},
        })
        return run_benchmark(rc).to_json(include_timing=False)

    ok_report = tiny_report() == tiny_report()
    announce(11, ok_checkpoint and ok_resume and ok_report,
             "identical seeds give byte-identical checkpoints and reports "
             "(timing stripped); midpoint resume reproduces the full run")
