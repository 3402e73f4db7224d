import numpy as np

import dualimpute.numerics as nm
from dualimpute.data import DataMatrix, apply_mask, compute_mask
from dualimpute.gain import (
    Discriminator,
    GainConfig,
    Generator,
    compose_imputation,
    critic_loss,
    gain_impute,
    gain_train,
    generator_loss,
    temporal_attention,
)
from dualimpute.masking import MCAR, CurriculumMasking, MaskingSpec, mask_mcar
from dualimpute.mice import column_mean_fill
from dualimpute.numerics import Tensor


def dm(values):
    values = np.asarray(values, dtype=np.float64)
    return DataMatrix(values, [f"c{i}" for i in range(values.shape[1])])


def attention_oracle(h, ctx, wq, wk, wv):
    q = ctx @ wq
    k = h @ wk
    v = h @ wv
    e = h.shape[-1]
    scores = q @ k.T / np.sqrt(e)
    scores[np.triu_indices_from(scores, k=1)] = -np.inf
    w = np.exp(scores - scores.max(axis=-1, keepdims=True))
    w /= w.sum(axis=-1, keepdims=True)
    return w @ v


class LinearCritic:
    """Duck-typed critic: per-row score wᵀx, mask ignored."""

    def __init__(self, w):
        self.w = Tensor(np.asarray(w, dtype=np.float64).reshape(-1, 1))
        self.params = {"w": self.w}

    def forward(self, x, m_bits):
        return nm.matmul(x, self.w)


class TanhCritic:
    """Duck-typed one-hidden-layer critic with analytic input gradient."""

    def __init__(self, w1, w2):
        self.w1 = Tensor(w1)
        self.w2 = Tensor(w2)
        self.params = {"w1": self.w1, "w2": self.w2}

    def forward(self, x, m_bits):
        return nm.matmul(nm.tanh(nm.matmul(x, self.w1)), self.w2)

    def score_np(self, x):
        return np.tanh(x @ self.w1.data) @ self.w2.data

    def input_grad_np(self, x):
        t = np.tanh(x @ self.w1.data)
        return ((1 - t ** 2) * self.w2.data.ravel()) @ self.w1.data.T


class TestTemporalAttention:
    def test_single_step_returns_value_row(self):
        rng = np.random.default_rng(0)
        e = 4
        h = rng.normal(size=(1, e))
        ctx = rng.normal(size=(1, e))
        wq, wk, wv = (rng.normal(size=(e, e)) for _ in range(3))
        out = temporal_attention(Tensor(h), Tensor(ctx), Tensor(wq),
                                 Tensor(wk), Tensor(wv))
        assert np.allclose(out.data, h @ wv, atol=1e-12)

    def test_uniform_scores_causal_prefix_mean(self):
        rng = np.random.default_rng(1)
        e = 3
        h = rng.normal(size=(3, e))
        ctx = rng.normal(size=(3, e))
        zero = Tensor(np.zeros((e, e)))
        eye = Tensor(np.eye(e))
        out = temporal_attention(Tensor(h), Tensor(ctx), zero, eye, eye)
        for i in range(3):
            assert np.allclose(out.data[i], h[:i + 1].mean(axis=0), atol=1e-12)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        e = 5
        h = rng.normal(size=(4, e))
        ctx = rng.normal(size=(4, e))
        wq, wk, wv = (rng.normal(size=(e, e)) for _ in range(3))
        out = temporal_attention(Tensor(h), Tensor(ctx), Tensor(wq),
                                 Tensor(wk), Tensor(wv))
        assert np.max(np.abs(out.data - attention_oracle(h, ctx, wq, wk, wv))) < 1e-10

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        e, steps = 4, 6
        q = Tensor(rng.normal(size=(steps, e)))
        k = Tensor(rng.normal(size=(steps, e)))
        v = Tensor(rng.normal(size=(steps, e)))
        _, w = nm.scaled_attention(q, k, v, bias=nm.causal_bias(steps))
        assert np.max(np.abs(w.data.sum(axis=-1) - 1.0)) < 1e-9

    def test_future_invariance(self):
        rng = np.random.default_rng(4)
        e = 4
        h = rng.normal(size=(5, e))
        ctx = rng.normal(size=(5, e))
        wq, wk, wv = (Tensor(rng.normal(size=(e, e))) for _ in range(3))
        out1 = temporal_attention(Tensor(h), Tensor(ctx), wq, wk, wv).data
        i = 2
        h2 = h.copy()
        ctx2 = ctx.copy()
        h2[i + 1:] += rng.normal(size=h2[i + 1:].shape)
        ctx2[i + 1:] += rng.normal(size=ctx2[i + 1:].shape)
        out2 = temporal_attention(Tensor(h2), Tensor(ctx2), wq, wk, wv).data
        assert np.array_equal(out1[:i + 1], out2[:i + 1])


class TestGeneratorForward:
    def test_composition_identity_when_fully_observed(self):
        rng = np.random.default_rng(5)
        x = dm(rng.normal(size=(6, 4)))
        cfg = GainConfig(seed=1, hidden=(8, 8))
        gen = Generator(4, cfg, np.random.default_rng(cfg.seed))
        out = gain_impute(gen, x, compute_mask(x))
        assert np.array_equal(out, x.values)

    def test_deterministic_given_seed(self):
        cfg = GainConfig(seed=7, hidden=(8, 8))
        g1 = Generator(3, cfg, np.random.default_rng(cfg.seed))
        g2 = Generator(3, cfg, np.random.default_rng(cfg.seed))
        for k in g1.params:
            assert np.array_equal(g1.params[k].data, g2.params[k].data)

    def test_output_shape(self):
        rng = np.random.default_rng(6)
        cfg = GainConfig(seed=2, hidden=(8, 8))
        gen = Generator(5, cfg, np.random.default_rng(cfg.seed))
        n = 7
        x = Tensor(rng.normal(size=(n, 5)))
        z = Tensor(rng.normal(size=(n, 5, cfg.noise_dim)))
        out = gen.forward(x, np.ones((n, 5), dtype=np.int8), z)
        assert out.shape == (n, 5)


class TestCriticLoss:
    def test_zero_critic_gives_penalty_only(self):
        rng = np.random.default_rng(7)
        d = 3
        critic = LinearCritic(np.zeros(d))
        x = Tensor(rng.normal(size=(5, d)))
        with nm.tape():
            loss = critic_loss(critic, x, x, np.ones((5, d), dtype=np.int8),
                               gp_weight=10.0)
        assert abs(loss.item() - 10.0) < 1e-8

    def test_unit_linear_critic_on_equal_batches(self):
        rng = np.random.default_rng(8)
        d = 4
        w = rng.normal(size=d)
        w /= np.linalg.norm(w)
        critic = LinearCritic(w)
        x = Tensor(rng.normal(size=(6, d)))
        with nm.tape():
            loss = critic_loss(critic, x, x, np.ones((6, d), dtype=np.int8),
                               gp_weight=10.0)
        assert abs(loss.item()) < 1e-12

    def test_matches_formula_oracle(self):
        rng = np.random.default_rng(9)
        n, d, h = 5, 3, 6
        critic = TanhCritic(rng.normal(0, 0.7, (d, h)), rng.normal(0, 0.7, (h, 1)))
        xr = rng.normal(size=(n, d))
        xf = rng.normal(size=(n, d))
        gp = 10.0
        with nm.tape():
            loss = critic_loss(critic, Tensor(xr), Tensor(xf),
                               np.ones((n, d), dtype=np.int8), gp,
                               rng=np.random.default_rng(123))
        u = np.random.default_rng(123).uniform(size=(n, 1))
        x_tilde = u * xr + (1 - u) * xf
        base = critic.score_np(xr).mean() - critic.score_np(xf).mean()
        norms = np.linalg.norm(critic.input_grad_np(x_tilde), axis=1)
        expected = base + gp * np.mean((norms - 1.0) ** 2)
        assert abs(loss.item() - expected) < 1e-10


class TestGeneratorLoss:
    def test_perfect_fill_leaves_adversarial_only(self):
        rng = np.random.default_rng(10)
        n, d = 5, 3
        critic = TanhCritic(rng.normal(size=(d, 4)), rng.normal(size=(4, 1)))
        x = rng.normal(size=(n, d))
        bits = (rng.random((n, d)) > 0.4).astype(np.int8)
        x_hat = x.copy()  # exact on missing cells
        with nm.tape():
            loss = generator_loss(critic, Tensor(x), Tensor(x_hat), bits, 10.0)
        expected = -critic.score_np(x_hat).mean()
        assert abs(loss.item() - expected) < 1e-12

    def test_zero_recon_weight_pure_adversarial(self):
        rng = np.random.default_rng(11)
        n, d = 4, 3
        critic = TanhCritic(rng.normal(size=(d, 4)), rng.normal(size=(4, 1)))
        x = rng.normal(size=(n, d))
        x_hat = rng.normal(size=(n, d))
        bits = (rng.random((n, d)) > 0.5).astype(np.int8)
        with nm.tape():
            loss = generator_loss(critic, Tensor(x), Tensor(x_hat), bits, 0.0)
        assert abs(loss.item() - (-critic.score_np(x_hat).mean())) < 1e-12

    def test_matches_formula_oracle(self):
        rng = np.random.default_rng(12)
        n, d = 6, 4
        critic = TanhCritic(rng.normal(size=(d, 5)), rng.normal(size=(5, 1)))
        x = rng.normal(size=(n, d))
        x_hat = rng.normal(size=(n, d))
        bits = (rng.random((n, d)) > 0.3).astype(np.int8)
        alpha = 7.0
        with nm.tape():
            loss = generator_loss(critic, Tensor(x), Tensor(x_hat), bits, alpha)
        count = (bits == 0).sum()
        expected = (-critic.score_np(x_hat).mean()
                    + alpha * ((x - x_hat)[bits == 0] ** 2).sum() / count)
        assert abs(loss.item() - expected) < 1e-10

    def test_no_missing_cells_recon_zero(self):
        rng = np.random.default_rng(13)
        n, d = 3, 2
        critic = TanhCritic(rng.normal(size=(d, 3)), rng.normal(size=(3, 1)))
        x = rng.normal(size=(n, d))
        x_hat = rng.normal(size=(n, d))
        with nm.tape():
            loss = generator_loss(critic, Tensor(x), Tensor(x_hat),
                                  np.ones((n, d), dtype=np.int8), 10.0)
        assert abs(loss.item() - (-critic.score_np(x_hat).mean())) < 1e-12


class TestGradientIntegrity:
    def test_generator_gradients_match_fd(self):
        rng = np.random.default_rng(14)
        n, d = 4, 3
        cfg = GainConfig(seed=3, hidden=(5, 5), attn_dim=4)
        gen = Generator(d, cfg, np.random.default_rng(cfg.seed))
        critic = TanhCritic(rng.normal(0, 0.5, (d, 4)), rng.normal(0, 0.5, (4, 1)))
        x = rng.normal(size=(n, d))
        bits = (rng.random((n, d)) > 0.4).astype(np.int8)
        x_filled = np.where(bits == 1, x, 0.05 * rng.standard_normal((n, d)))
        z = rng.standard_normal((n, d, cfg.noise_dim))

        names = sorted(gen.params)
        with nm.tape():
            x_hat = gen.forward(Tensor(x_filled), bits, Tensor(z))
            loss = generator_loss(critic, Tensor(x), x_hat, bits, 10.0)
            grads = nm.backward(loss, [gen.params[k] for k in names])

        for name, g in zip(names, grads):
            orig = gen.params[name]

            def f(arr, name=name):
                gen.params[name] = Tensor(arr)
                try:
                    out = gen.forward(Tensor(x_filled), bits, Tensor(z))
                    return generator_loss(critic, Tensor(x), out, bits, 10.0).item()
                finally:
                    gen.params[name] = orig

            num = nm.finite_diff(f, orig.data.copy())
            assert nm.max_rel_err(g.data, num) < 1e-3, name

    def test_critic_gradients_match_fd_including_penalty(self):
        rng = np.random.default_rng(15)
        n, d = 4, 3
        cfg = GainConfig(seed=4, hidden=(5, 5))
        disc = Discriminator(d, cfg, np.random.default_rng(cfg.seed))
        xr = rng.normal(size=(n, d))
        xf = rng.normal(size=(n, d))
        bits = np.ones((n, d), dtype=np.int8)
        names = sorted(disc.params)
        with nm.tape():
            loss = critic_loss(disc, Tensor(xr), Tensor(xf), bits, 10.0,
                               rng=np.random.default_rng(99))
            grads = nm.backward(loss, [disc.params[k] for k in names])
        for name, g in zip(names, grads):
            orig = disc.params[name]

            def f(arr, name=name):
                disc.params[name] = Tensor(arr)
                try:
                    with nm.tape():
                        return critic_loss(disc, Tensor(xr), Tensor(xf), bits,
                                           10.0, rng=np.random.default_rng(99)).item()
                finally:
                    disc.params[name] = orig

            num = nm.finite_diff(f, orig.data.copy())
            assert nm.max_rel_err(g.data, num) < 1e-3, name

    def test_penalty_modes_agree(self):
        from dualimpute.gain import _critic_grads

        rng = np.random.default_rng(16)
        n, d = 4, 3
        cfg_e = GainConfig(seed=5, hidden=(5, 5), penalty_grad_mode="exact")
        cfg_f = GainConfig(seed=5, hidden=(5, 5), penalty_grad_mode="finite_diff")
        disc = Discriminator(d, cfg_e, np.random.default_rng(5))
        xr = rng.normal(size=(n, d))
        xf = rng.normal(size=(n, d))
        bits = np.ones((n, d), dtype=np.int8)
        val_e, g_e = _critic_grads(disc, xr, xf, bits, cfg_e,
                                   np.random.default_rng(7))
        val_f, g_f = _critic_grads(disc, xr, xf, bits, cfg_f,
                                   np.random.default_rng(7))
        assert abs(val_e - val_f) < 1e-9
        for k in g_e:
            assert nm.max_rel_err(g_e[k].data, g_f[k].data) < 1e-3


class TestGainTrain:
    def curriculum(self, seed=0):
        # all three phases draw the deployment mechanism so train and test
        # missingness match
        spec = MaskingSpec(MCAR, mcar_rate_low=0.3, mcar_rate_high=0.3, seed=seed)
        return CurriculumMasking(mcar=spec, mar=spec, mnar=spec)

    def test_zero_epochs_deterministic_init(self):
        x = dm(np.random.default_rng(17).normal(size=(10, 3)))
        cfg = GainConfig(epochs=0, seed=11, hidden=(8, 8))
        r1 = gain_train(x, compute_mask(x), cfg, self.curriculum())
        r2 = gain_train(x, compute_mask(x), cfg, self.curriculum())
        assert r1.history == []
        for k in r1.generator.params:
            assert np.array_equal(r1.generator.params[k].data,
                                  r2.generator.params[k].data)

    def test_history_length(self):
        x = dm(np.random.default_rng(18).normal(size=(20, 3)))
        cfg = GainConfig(epochs=4, seed=12, hidden=(8, 8), critic_steps=1)
        res = gain_train(x, compute_mask(x), cfg, self.curriculum())
        assert len(res.history) == 4

    def test_bitwise_deterministic_training(self):
        x = dm(np.random.default_rng(19).normal(size=(15, 3)))
        cfg = GainConfig(epochs=3, seed=13, hidden=(8, 8), critic_steps=2)
        r1 = gain_train(x, compute_mask(x), cfg, self.curriculum())
        r2 = gain_train(x, compute_mask(x), cfg, self.curriculum())
        for k in r1.generator.params:
            assert np.array_equal(r1.generator.params[k].data,
                                  r2.generator.params[k].data)
        for k in r1.discriminator.params:
            assert np.array_equal(r1.discriminator.params[k].data,
                                  r2.discriminator.params[k].data)

    def test_beats_mean_fill_on_correlated_pair(self):
        rng = np.random.default_rng(20)
        n = 300
        a = rng.normal(size=n)
        b = 0.9 * a + np.sqrt(1 - 0.81) * rng.normal(size=n)
        truth = np.column_stack([a, b])
        x = dm(truth)
        spec = MaskingSpec(MCAR, mcar_rate_low=0.3, mcar_rate_high=0.3, seed=21)
        m_test = mask_mcar(x, spec, spec.rng())
        masked = apply_mask(x, m_test)

        cfg = GainConfig(epochs=200, seed=14, hidden=(24, 24), critic_steps=2)
        res = gain_train(x, compute_mask(x), cfg, self.curriculum(seed=22))
        imputed = gain_impute(res.generator, masked, m_test)

        miss = m_test.bits == 0
        rmse_gain = np.sqrt(np.mean((imputed[miss] - truth[miss]) ** 2))
        means = column_mean_fill(masked.values, m_test.bits)
        mean_fill = np.where(miss, np.broadcast_to(means, truth.shape), truth)
        rmse_mean = np.sqrt(np.mean((mean_fill[miss] - truth[miss]) ** 2))
        assert rmse_gain < rmse_mean

    def test_observed_cells_exact_after_compose(self):
        rng = np.random.default_rng(23)
        truth = rng.normal(size=(30, 4))
        hat = rng.normal(size=(30, 4))
        bits = (rng.random((30, 4)) > 0.5).astype(np.int8)
        out = compose_imputation(truth, bits, hat)
        assert np.array_equal(out[bits == 1], truth[bits == 1])
