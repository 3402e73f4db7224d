"""Neural imputation branch: generator vs Wasserstein critic.

The generator embeds each feature position as a step, runs a causally
masked attention layer whose queries come from the previous step's
context, and decodes a dense reconstruction. The critic scores
(matrix, mask) pairs and is regularized toward unit input-gradient norm
at random interpolates between real and generated batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .data import DataMatrix, MaskMatrix
from .errors import ContractError, NumericalError
from .masking import CurriculumMasking, draw_mask
from .numerics import Tensor

__all__ = [
    "GainConfig",
    "Generator",
    "Discriminator",
    "TrainedGain",
    "temporal_attention",
    "critic_loss",
    "generator_loss",
    "gain_train",
    "gain_impute",
    "compose_imputation",
]


@dataclass
class GainConfig:
    noise_dim: int = 1
    attn_dim: int = 8
    hidden: tuple[int, int] = (48, 48)
    gp_weight: float = 10.0
    recon_weight: float = 10.0
    critic_steps: int = 5
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    epochs: int = 100
    seed: int = 0
    noise_fill_scale: float = 0.1
    penalty_grad_mode: str = "exact"  # or "finite_diff"

    def __post_init__(self):
        for name in ("noise_dim", "attn_dim", "gp_weight", "recon_weight",
                     "critic_steps", "lr"):
            if getattr(self, name) <= 0:
                raise ContractError(f"GainConfig.{name} must be positive")
        if self.penalty_grad_mode not in ("exact", "finite_diff"):
            raise ContractError(
                f"unknown penalty_grad_mode {self.penalty_grad_mode!r}")


def temporal_attention(h: Tensor, context_prev: Tensor, wq: Tensor,
                       wk: Tensor, wv: Tensor) -> Tensor:
    """Causally masked attention: queries from the previous-step context,
    keys/values from the current representation. Row i never sees steps
    beyond i. Accepts (steps, e) or batched (n, steps, e)."""
    steps = h.shape[-2]
    q = nm.matmul(context_prev, wq)
    k = nm.matmul(h, wk)
    v = nm.matmul(h, wv)
    out, _ = nm.scaled_attention(q, k, v, bias=nm.causal_bias(steps))
    return out


def _shift_steps(h: Tensor) -> Tensor:
    """Previous-step context: row t becomes row t-1, first row zeros."""
    steps = h.shape[1]
    zeros = Tensor(np.zeros((h.shape[0], 1, h.shape[2])))
    if steps == 1:
        return zeros
    return nm.concat([zeros, nm.slice_axis(h, 1, 0, steps - 1)], 1)


class Generator:
    """Dense reconstruction network over feature steps."""

    def __init__(self, n_features: int, cfg: GainConfig,
                 rng: np.random.Generator):
        d, e, nz = n_features, cfg.attn_dim, cfg.noise_dim
        h1, h2 = cfg.hidden
        self.n_features = d
        self.cfg = cfg
        step_in = 2 + nz
        self.params: dict[str, Tensor] = {
            "w_in": nm.glorot(rng, step_in, e),
            "b_in": Tensor(np.zeros(e)),
            "wq": nm.glorot(rng, e, e),
            "wk": nm.glorot(rng, e, e),
            "wv": nm.glorot(rng, e, e),
            "w1": nm.glorot(rng, d * e, h1),
            "b1": Tensor(np.zeros(h1)),
            "w2": nm.glorot(rng, h1, h2),
            "b2": Tensor(np.zeros(h2)),
            "w_out": nm.glorot(rng, h2, d),
            "b_out": Tensor(np.zeros(d)),
        }

    def forward(self, x_filled: Tensor, m_bits: np.ndarray,
                z: Tensor) -> Tensor:
        """Dense reconstruction X-hat for a batch.

        x_filled carries noise draws in the gaps, m_bits flags observed
        cells, z is per-step noise of shape (n, d, noise_dim).
        """
        p = self.params
        n, d = x_filled.shape
        mask_t = Tensor(m_bits.astype(np.float64))
        steps = nm.concat([
            nm.reshape(x_filled, (n, d, 1)),
            nm.reshape(mask_t, (n, d, 1)),
            z,
        ], 2)
        h = nm.tanh(nm.add_bias(nm.matmul(steps, p["w_in"]), p["b_in"]))
        attn = temporal_attention(h, _shift_steps(h), p["wq"], p["wk"], p["wv"])
        h = nm.add(h, attn)
        flat = nm.reshape(h, (n, d * self.cfg.attn_dim))
        h1 = nm.tanh(nm.linear(flat, p["w1"], p["b1"]))
        h2 = nm.tanh(nm.linear(h1, p["w2"], p["b2"]))
        return nm.linear(h2, p["w_out"], p["b_out"])


class Discriminator:
    """Wasserstein critic over (matrix, mask) pairs; no terminal squashing."""

    def __init__(self, n_features: int, cfg: GainConfig,
                 rng: np.random.Generator):
        d = n_features
        h1, h2 = cfg.hidden
        self.n_features = d
        self.params: dict[str, Tensor] = {
            "w1": nm.glorot(rng, 2 * d, h1),
            "b1": Tensor(np.zeros(h1)),
            "w2": nm.glorot(rng, h1, h2),
            "b2": Tensor(np.zeros(h2)),
            "w_out": nm.glorot(rng, h2, 1),
            "b_out": Tensor(np.zeros(1)),
        }

    def forward(self, x: Tensor, m_bits: np.ndarray) -> Tensor:
        p = self.params
        inp = nm.concat([x, Tensor(m_bits.astype(np.float64))], 1)
        h = nm.tanh(nm.linear(inp, p["w1"], p["b1"]))
        h = nm.tanh(nm.linear(h, p["w2"], p["b2"]))
        return nm.linear(h, p["w_out"], p["b_out"])


def compose_imputation(x_values: np.ndarray, bits: np.ndarray,
                       x_hat: np.ndarray) -> np.ndarray:
    """Observed cells pass through exactly; gaps take the reconstruction."""
    return np.where(bits == 1, np.nan_to_num(x_values), x_hat)


def critic_loss(disc: Discriminator, x_real: Tensor, x_fake: Tensor,
                m_bits: np.ndarray, gp_weight: float,
                rng: np.random.Generator | None = None) -> Tensor:
    """Critic objective: mean score gap plus the unit-gradient penalty.

    The penalty is evaluated at per-sample uniform interpolates between
    the real and generated batches; with no rng the midpoint is used.
    """
    s_real = nm.mean_all(disc.forward(x_real, m_bits))
    s_fake = nm.mean_all(disc.forward(x_fake, m_bits))
    base = nm.sub(s_real, s_fake)

    n = x_real.shape[0]
    u = rng.uniform(size=(n, 1)) if rng is not None else np.full((n, 1), 0.5)
    x_tilde = Tensor(u * x_real.data + (1.0 - u) * x_fake.data)
    s = nm.sum_all(disc.forward(x_tilde, m_bits))
    (gx,) = nm.backward(s, [x_tilde], create_graph=True)
    norms = nm.row_norms(gx)
    shifted = nm.add_const(norms, -1.0)
    penalty = nm.mean_all(nm.mul(shifted, shifted))
    return nm.add(base, nm.mul_const(penalty, gp_weight))


def _penalty_only(disc: Discriminator, x_tilde_np: np.ndarray,
                  m_bits: np.ndarray) -> Tensor:
    x_tilde = Tensor(x_tilde_np)
    s = nm.sum_all(disc.forward(x_tilde, m_bits))
    (gx,) = nm.backward(s, [x_tilde], create_graph=True)
    norms = nm.row_norms(gx)
    shifted = nm.add_const(norms, -1.0)
    return nm.mean_all(nm.mul(shifted, shifted))


def generator_loss(disc: Discriminator, x: Tensor, x_hat: Tensor,
                   m_bits: np.ndarray, recon_weight: float) -> Tensor:
    """Adversarial term plus reconstruction over the masked cells.

    m_bits must be 0 exactly where the cell is hidden and its true value
    is known; the reconstruction average is over that cell count.
    """
    adv = nm.neg(nm.mean_all(disc.forward(x_hat, m_bits)))
    count = int((m_bits == 0).sum())
    if count == 0:
        return adv
    w = Tensor((m_bits == 0).astype(np.float64))
    resid = nm.mul(nm.sub(x, x_hat), w)
    recon = nm.mul_const(nm.sum_all(nm.mul(resid, resid)),
                         recon_weight / count)
    return nm.add(adv, recon)


@dataclass
class TrainedGain:
    generator: Generator
    discriminator: Discriminator
    history: list[dict] = field(default_factory=list)


def _critic_grads(disc: Discriminator, x_real_np: np.ndarray,
                  x_fake_np: np.ndarray, m_bits: np.ndarray, cfg: GainConfig,
                  rng: np.random.Generator) -> tuple[float, dict[str, Tensor]]:
    names = sorted(disc.params)
    if cfg.penalty_grad_mode == "exact":
        with nm.tape():
            loss = critic_loss(disc, Tensor(x_real_np), Tensor(x_fake_np),
                               m_bits, cfg.gp_weight, rng)
            grads = nm.backward(loss, [disc.params[k] for k in names])
        return loss.item(), dict(zip(names, grads))

    # finite-difference fallback: exact gradients for the score terms,
    # numeric gradients for the penalty term
    n = x_real_np.shape[0]
    u = rng.uniform(size=(n, 1))
    x_tilde = u * x_real_np + (1.0 - u) * x_fake_np
    with nm.tape():
        s_real = nm.mean_all(disc.forward(Tensor(x_real_np), m_bits))
        s_fake = nm.mean_all(disc.forward(Tensor(x_fake_np), m_bits))
        base = nm.sub(s_real, s_fake)
        base_grads = nm.backward(base, [disc.params[k] for k in names])
    with nm.tape():
        pen_val = _penalty_only(disc, x_tilde, m_bits).item()
    total = float(base.item() + cfg.gp_weight * pen_val)
    grads: dict[str, Tensor] = {}
    for name, bg in zip(names, base_grads):
        orig = disc.params[name]

        def pen_at(arr: np.ndarray, name=name) -> float:
            disc.params[name] = Tensor(arr)
            try:
                with nm.tape():
                    return _penalty_only(disc, x_tilde, m_bits).item()
            finally:
                disc.params[name] = orig

        num = nm.finite_diff(pen_at, orig.data.copy(), h=1e-5)
        grads[name] = Tensor(bg.data + cfg.gp_weight * num)
    return total, grads


def gain_train(x: DataMatrix, m_true: MaskMatrix, cfg: GainConfig,
               curriculum: CurriculumMasking) -> TrainedGain:
    """Alternating critic/generator optimization under curriculum masks.

    Each epoch redraws a synthetic mask on the pristine data with the
    scheduled mechanism, runs cfg.critic_steps critic updates, then one
    generator update. Losses are recorded per epoch.
    """
    rng = np.random.default_rng(cfg.seed)
    d = x.n_cols
    gen = Generator(d, cfg, rng)
    disc = Discriminator(d, cfg, rng)
    result = TrainedGain(gen, disc)
    if cfg.epochs == 0:
        return result

    adam_g = nm.Adam(cfg.lr, cfg.beta1, cfg.beta2)
    adam_d = nm.Adam(cfg.lr, cfg.beta1, cfg.beta2)
    values = np.nan_to_num(x.values)

    for epoch in range(cfg.epochs):
        spec = curriculum.spec_for_epoch(epoch, cfg.epochs)
        syn = draw_mask(x, spec, rng)
        bits = syn.bits * m_true.bits          # observed this epoch
        sup_bits = 1 - ((bits == 0) & (m_true.bits == 1)).astype(np.int8)

        def gen_forward() -> Tensor:
            noise_fill = cfg.noise_fill_scale * rng.standard_normal(values.shape)
            x_filled = Tensor(np.where(bits == 1, values, noise_fill))
            z = Tensor(rng.standard_normal((values.shape[0], d, cfg.noise_dim)))
            return gen.forward(x_filled, bits, z)

        critic_val = 0.0
        for _ in range(cfg.critic_steps):
            with nm.no_record():
                x_fake = gen_forward().data
            critic_val, grads = _critic_grads(disc, values, x_fake, bits,
                                              cfg, rng)
            if not np.isfinite(critic_val):
                raise NumericalError(
                    f"critic loss diverged at epoch {epoch}: {critic_val}")
            disc.params = adam_d.step(disc.params, grads)

        gnames = sorted(gen.params)
        with nm.tape():
            x_hat = gen_forward()
            g_loss = generator_loss(disc, Tensor(values), x_hat, sup_bits,
                                    cfg.recon_weight)
            g_grads = nm.backward(g_loss, [gen.params[k] for k in gnames])
        g_val = g_loss.item()
        if not np.isfinite(g_val):
            raise NumericalError(
                f"generator loss diverged at epoch {epoch}: {g_val}")
        gen.params = adam_g.step(gen.params, dict(zip(gnames, g_grads)))

        miss = sup_bits == 0
        with nm.no_record():
            recon = float(np.sqrt(np.mean(
                (x_hat.data[miss] - values[miss]) ** 2))) if miss.any() else 0.0
        result.history.append(
            {"critic": critic_val, "generator": g_val, "recon_rmse": recon})
    return result


def gain_impute(gen: Generator, x: DataMatrix, m: MaskMatrix,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Impute with a trained generator; zero noise when rng is omitted."""
    values = np.nan_to_num(x.values)
    bits = m.bits
    n, d = values.shape
    if rng is None:
        fill = np.zeros_like(values)
        z = np.zeros((n, d, gen.cfg.noise_dim))
    else:
        fill = gen.cfg.noise_fill_scale * rng.standard_normal(values.shape)
        z = rng.standard_normal((n, d, gen.cfg.noise_dim))
    with nm.no_record():
        x_hat = gen.forward(Tensor(np.where(bits == 1, values, fill)),
                            bits, Tensor(z))
    return compose_imputation(x.values, bits, x_hat.data)
