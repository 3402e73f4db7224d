"""The assembled dual-path network: embed, gate, run both branches, mix,
fuse, and predict.

During training the per-sample gate output mixes the two branch fills so
the gate receives gradients; hard routing happens only at inference.
Ablation variants pin the mixing coefficient or drop a branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .data import (
    DataMatrix,
    ImputationResult,
    MaskMatrix,
    PROV_FUSED,
    PROV_GAIN,
    PROV_MICE,
    PROV_OBSERVED,
)
from .errors import ContractError
from .fusion import (
    AdaptiveFusionHead,
    CrossPathAttention,
    confidence_signals,
    convex_mix,
    cross_path_fuse,
)
from .gain import Discriminator, GainConfig, Generator
from .mice import MiceConfig, MiceModel, mice_fit_impute, mice_transform
from .numerics import Tensor
from .routing import GateNetwork, MissingnessEmbedder, PathDecision, route

VARIANTS = ("full", "static-fusion-0.5", "no-adaptive-fusion",
            "no-mice-path", "no-gain-path")

FUSION_MODES = ("routed", "fused", "static:0.5")


@dataclass
class ModelConfig:
    embed_dim: int = 16
    d_k: int = 16
    d_v: int = 16
    d_feat: int = 16
    trunk_hidden: int = 16
    routing_mode: str = "fixed"      # fixed | learned
    tau_gate: float = 0.5
    fusion_mode: str = "fused"       # routed | fused | static:0.5
    variant: str = "full"
    dropout: float = 0.0
    stochastic_inference: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if self.fusion_mode not in FUSION_MODES:
            raise ContractError(f"unknown fusion mode {self.fusion_mode!r}")
        if self.routing_mode not in ("fixed", "learned"):
            raise ContractError(f"unknown routing mode {self.routing_mode!r}")


@dataclass
class ForwardResult:
    imputed: Tensor            # composed matrix, exact at observed cells
    gain_fill: np.ndarray      # composed neural fill
    mice_fill: np.ndarray      # composed statistical fill
    gamma: Tensor | None       # (n, 1) gate outputs
    mix: Tensor | None         # (n, 1) mixing coefficient actually used
    y_logits: Tensor | None
    y_prob: Tensor | None
    lam: Tensor | None
    c_imp: float
    c_task: float
    mr_rows: np.ndarray


class DualPathModel:
    """All learned components plus the fitted statistical branch."""

    def __init__(self, n_features: int, cfg: ModelConfig,
                 gain_cfg: GainConfig, mice_cfg: MiceConfig,
                 rng: np.random.Generator):
        self.n_features = n_features
        self.cfg = cfg
        self.gain_cfg = gain_cfg
        self.mice_cfg = mice_cfg
        self.embedder = MissingnessEmbedder(n_features, cfg.embed_dim, rng)
        self.gate = GateNetwork(cfg.embed_dim, cfg.tau_gate,
                                cfg.routing_mode, rng)
        self.generator = Generator(n_features, gain_cfg, rng)
        self.discriminator = Discriminator(n_features, gain_cfg, rng)
        self.cpa = CrossPathAttention(n_features, cfg.embed_dim,
                                      cfg.d_k, cfg.d_v, rng)
        self.trunk = {
            "w": nm.glorot(rng, n_features, cfg.trunk_hidden),
            "b": Tensor(np.zeros(cfg.trunk_hidden)),
        }
        self.head = AdaptiveFusionHead(cfg.d_v, cfg.trunk_hidden,
                                       cfg.d_feat, rng)
        self.mice_model: MiceModel | None = None

    # -- parameter plumbing -------------------------------------------------

    def parameters(self, include_critic: bool = False) -> dict[str, Tensor]:
        groups = {
            "emb": self.embedder.params,
            "gate": self.gate.params,
            "gen": self.generator.params,
            "cpa": self.cpa.params,
            "trunk": self.trunk,
            "head": self.head.params,
        }
        if include_critic:
            groups["disc"] = self.discriminator.params
        return {f"{g}.{k}": t for g, ps in groups.items() for k, t in ps.items()}

    def load_parameters(self, flat: dict[str, Tensor]) -> None:
        groups = {
            "emb": self.embedder.params,
            "gate": self.gate.params,
            "gen": self.generator.params,
            "cpa": self.cpa.params,
            "trunk": self.trunk,
            "head": self.head.params,
            "disc": self.discriminator.params,
        }
        for name, tensor in flat.items():
            group, key = name.split(".", 1)
            if group in groups and key in groups[group]:
                groups[group][key] = tensor

    # -- statistical branch --------------------------------------------------

    def fit_mice(self, x: DataMatrix, m: MaskMatrix,
                 rng: np.random.Generator) -> np.ndarray:
        """(Re)fit the chained-equation branch; returns its training fill."""
        if self.cfg.variant == "no-mice-path":
            return np.nan_to_num(x.values)
        res, self.mice_model = mice_fit_impute(x, m, self.mice_cfg, rng)
        return res.values

    def mice_fill(self, x: DataMatrix, m: MaskMatrix) -> np.ndarray:
        if self.cfg.variant == "no-mice-path" or self.mice_model is None:
            return np.nan_to_num(x.values)
        return mice_transform(self.mice_model, x, m).values

    # -- forward -------------------------------------------------------------

    def _mix_coefficient(self, gamma: Tensor | None, n: int) -> Tensor | None:
        v = self.cfg.variant
        if v == "no-mice-path":
            return Tensor(np.ones((n, 1)))
        if v == "no-gain-path":
            return Tensor(np.zeros((n, 1)))
        if v == "static-fusion-0.5" or self.cfg.fusion_mode == "static:0.5":
            return Tensor(np.full((n, 1), 0.5))
        return gamma

    def forward(self, x: DataMatrix, m: MaskMatrix,
                rng: np.random.Generator | None,
                t_norm: float,
                mice_fill_values: np.ndarray | None = None,
                truth: np.ndarray | None = None,
                y: np.ndarray | None = None,
                ema_c_imp: float = 0.0,
                ema_c_task: float = 0.0) -> ForwardResult:
        """One pass over a batch; rng=None makes every noise source zero.

        With `truth` (training) the confidence pair is measured on this
        batch; otherwise the provided running averages stand in.
        """
        cfg = self.cfg
        values, bits = x.values, m.bits
        n, d = values.shape
        filled0 = np.nan_to_num(values)
        mr_rows = 1.0 - bits.mean(axis=1)

        skip_gain = cfg.variant == "no-gain-path"
        skip_mice = cfg.variant == "no-mice-path"

        embedding = self.embedder.forward(values, bits)
        gamma = self.gate.gamma(embedding, mr_rows)

        if mice_fill_values is None:
            mice_fill_values = self.mice_fill(x, m)

        if skip_gain:
            gain_out = Tensor(mice_fill_values)
        else:
            if rng is None:
                fill = np.zeros_like(filled0)
                z = np.zeros((n, d, self.gain_cfg.noise_dim))
            else:
                fill = self.gain_cfg.noise_fill_scale * rng.standard_normal(values.shape)
                z = rng.standard_normal((n, d, self.gain_cfg.noise_dim))
            x_in = Tensor(np.where(bits == 1, filled0, fill))
            gain_raw = self.generator.forward(x_in, bits, z=Tensor(z))
            mask_t = Tensor(bits.astype(np.float64))
            inv_mask = Tensor((1 - bits).astype(np.float64))
            gain_out = nm.add(nm.mul(mask_t, Tensor(filled0)),
                              nm.mul(inv_mask, gain_raw))

        mice_t = gain_out if skip_mice else Tensor(mice_fill_values)

        mix = self._mix_coefficient(gamma, n)
        mix_b = nm.broadcast_to(mix, (n, d))
        one_minus = nm.broadcast_to(nm.add_const(nm.neg(mix), 1.0), (n, d))
        x_paths = nm.add(nm.mul(mix_b, gain_out), nm.mul(one_minus, mice_t))
        # recompose so observed cells match the input bit for bit
        mask_t = Tensor(bits.astype(np.float64))
        inv_mask = Tensor((1 - bits).astype(np.float64))
        imputed = nm.add(nm.mul(mask_t, Tensor(filled0)),
                         nm.mul(inv_mask, x_paths))

        h_fused, _ = cross_path_fuse(self.cpa, embedding, mice_t, gain_out)
        trunk_feats = nm.tanh(nm.linear(imputed, self.trunk["w"],
                                        self.trunk["b"]))
        if cfg.dropout > 0 and rng is not None:
            keep = (rng.random(trunk_feats.shape) >= cfg.dropout)
            trunk_feats = nm.mul(trunk_feats,
                                 Tensor(keep / (1.0 - cfg.dropout)))

        h_task = self.head.project_task(trunk_feats)
        h_imp = self.head.project_imp(h_fused)

        prelim_prob = self.head.head_probs(h_task)
        if truth is not None:
            with nm.no_record():
                c_imp, c_task = confidence_signals(
                    imputed.data, truth, bits,
                    y if y is not None else np.zeros(n),
                    prelim_prob.data.ravel())
        else:
            c_imp, c_task = ema_c_imp, ema_c_task

        if cfg.variant in ("no-adaptive-fusion", "static-fusion-0.5"):
            lam = Tensor(np.array([[0.5]]))
        else:
            lam = self.head.mixing_weight(t_norm, c_imp, c_task)
        mixed = convex_mix(lam, h_imp, h_task)
        y_logits = self.head.head_logits(mixed)
        y_prob = nm.sigmoid(y_logits)

        return ForwardResult(
            imputed=imputed,
            gain_fill=gain_out.data,
            mice_fill=mice_fill_values,
            gamma=gamma,
            mix=mix,
            y_logits=y_logits,
            y_prob=y_prob,
            lam=lam,
            c_imp=c_imp,
            c_task=c_task,
            mr_rows=mr_rows,
        )

    # -- inference-time composition -------------------------------------------

    def decisions(self, m: MaskMatrix,
                  gammas: np.ndarray | None = None) -> list[PathDecision]:
        mr_rows = 1.0 - m.bits.mean(axis=1)
        return route(mr_rows, gammas, self.cfg.routing_mode, self.cfg.tau_gate)

    def compose_inference(self, x: DataMatrix, m: MaskMatrix,
                          fwd: ForwardResult) -> ImputationResult:
        """Build the externally visible fill per the configured fusion mode."""
        bits = m.bits
        values = np.nan_to_num(x.values)
        provenance = np.where(bits == 1, PROV_OBSERVED, PROV_FUSED)
        if self.cfg.variant == "no-mice-path":
            out = np.where(bits == 1, values, fwd.gain_fill)
            provenance = np.where(bits == 1, PROV_OBSERVED, PROV_GAIN)
            return ImputationResult(out, provenance)
        if self.cfg.variant == "no-gain-path":
            out = np.where(bits == 1, values, fwd.mice_fill)
            provenance = np.where(bits == 1, PROV_OBSERVED, PROV_MICE)
            return ImputationResult(out, provenance)
        if self.cfg.fusion_mode == "routed":
            gam = fwd.gamma.data.ravel() if fwd.gamma is not None else None
            out = values.copy()
            prov = np.full(values.shape, PROV_OBSERVED, dtype="<U1")
            for i, dec in enumerate(self.decisions(m, gam)):
                fill_row = fwd.gain_fill[i] if dec.path == "GAIN" else fwd.mice_fill[i]
                code = PROV_GAIN if dec.path == "GAIN" else PROV_MICE
                miss = bits[i] == 0
                out[i, miss] = fill_row[miss]
                prov[i, miss] = code
            return ImputationResult(out, prov)
        out = np.where(bits == 1, values, fwd.imputed.data)
        return ImputationResult(out, provenance)
