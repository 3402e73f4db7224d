"""Per-sample path selection: missingness rate, pattern embedding, and the
gating network that scores how much a sample needs the neural branch.

The embedder runs an LSTM over the feature positions of each sample,
feeding (zero-filled value, mask bit) pairs, then refines the hidden
states with a causally masked single-head attention added residually.
The gate pools the embedding, appends the sample's missingness rate, and
squashes one affine score; its rate weight is softplus-reparameterized so
the score never decreases as missingness grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .data import MaskMatrix
from .errors import ContractError
from .numerics import Tensor

__all__ = ["PATH_MICE", "PATH_GAIN", "missingness_rate", "MissingnessEmbedder",
           "GateNetwork", "PathDecision", "route"]

PATH_MICE = "MICE"
PATH_GAIN = "GAIN"

MR_THRESHOLD = 0.2


def missingness_rate(m: MaskMatrix, scope: str = "dataset"):
    """Fraction of missing cells, over the whole mask or per row.

    Computed as missing-count over cell-count so canonical fractions
    (e.g. 20 of 100 cells) compare exactly against literal thresholds.
    """
    bits = m.bits
    if scope == "dataset":
        return float((bits.size - bits.sum()) / bits.size)
    if scope == "per_row":
        width = bits.shape[1]
        return (width - bits.sum(axis=1)) / float(width)
    raise ContractError(f"unknown scope {scope!r}")


class MissingnessEmbedder:
    """Recurrent encoder of (value, mask-bit) step pairs."""

    def __init__(self, n_features: int, hidden: int = 16,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_features = n_features
        self.hidden = hidden
        e = hidden
        self.params: dict[str, Tensor] = {
            "w": nm.glorot(rng, e + 2, 4 * e),
            "b": Tensor(np.zeros(4 * e)),
            "psi_wq": nm.glorot(rng, e, e),
            "psi_wk": nm.glorot(rng, e, e),
            "psi_wv": nm.glorot(rng, e, e),
        }

    def forward(self, values: np.ndarray, bits: np.ndarray) -> Tensor:
        """Embed a batch: (n, d) data with gaps -> (n, d, hidden)."""
        p = self.params
        n, d = values.shape
        if d != self.n_features:
            raise ContractError(f"expected {self.n_features} features, got {d}")
        e = self.hidden
        filled = np.where(bits == 1, np.nan_to_num(values), 0.0)
        h = Tensor(np.zeros((n, e)))
        c = Tensor(np.zeros((n, e)))
        states = []
        for t in range(d):
            step = Tensor(np.column_stack([filled[:, t], bits[:, t].astype(np.float64)]))
            h, c = nm.lstm_step(step, h, c, p["w"], p["b"], e)
            states.append(h)
        hs = nm.stack(states, 1)
        attn, _ = nm.scaled_attention(
            nm.matmul(hs, p["psi_wq"]),
            nm.matmul(hs, p["psi_wk"]),
            nm.matmul(hs, p["psi_wv"]),
            bias=nm.causal_bias(d),
        )
        return nm.add(hs, attn)


class GateNetwork:
    """Affine score over (pooled embedding, missingness rate) -> gamma."""

    def __init__(self, hidden: int = 16, tau_gate: float = 0.5,
                 mode: str = "fixed", rng: np.random.Generator | None = None):
        if mode not in ("fixed", "learned"):
            raise ContractError(f"unknown routing mode {mode!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.hidden = hidden
        self.tau_gate = tau_gate
        self.mode = mode
        self.params: dict[str, Tensor] = {
            "w_emb": nm.glorot(rng, hidden, 1),
            "raw_w_mr": Tensor(np.zeros((1, 1))),
            "b": Tensor(np.zeros(1)),
        }

    def set_mr_weight(self, value: float) -> None:
        """Pin the effective (positive) rate weight; inverse of softplus."""
        if value <= 0:
            raise ContractError("rate weight is constrained positive")
        self.params["raw_w_mr"] = Tensor(np.array([[np.log(np.expm1(value))]]))

    def zero(self) -> None:
        """Effective-zero gate: gamma = 0.5 for every input."""
        self.params["w_emb"] = Tensor(np.zeros((self.hidden, 1)))
        self.params["raw_w_mr"] = Tensor(np.full((1, 1), -1e9))
        self.params["b"] = Tensor(np.zeros(1))

    def gamma(self, embedding: Tensor, mr_rows: np.ndarray) -> Tensor:
        """Per-sample probability of needing the neural path, shape (n, 1)."""
        p = self.params
        pooled = nm.mean_axis(embedding, 1)
        n = pooled.shape[0]
        w_mr = nm.softplus(p["raw_w_mr"])
        mr_col = Tensor(np.asarray(mr_rows, dtype=np.float64).reshape(-1, 1))
        logit = nm.add(
            nm.matmul(pooled, p["w_emb"]),
            nm.mul(mr_col, nm.broadcast_to(w_mr, (n, 1))),
        )
        return nm.sigmoid(nm.add_bias(logit, p["b"]))


@dataclass
class PathDecision:
    mr: float
    gamma: float | None
    path: str


def route(mr_rows: np.ndarray, gammas: np.ndarray | None = None,
          mode: str = "fixed", tau_gate: float = 0.5) -> list[PathDecision]:
    """Hard per-sample assignment; ties go to the neural path."""
    mr_rows = np.asarray(mr_rows, dtype=np.float64)
    decisions = []
    if mode == "fixed":
        for i, mr in enumerate(mr_rows):
            g = None if gammas is None else float(gammas[i])
            path = PATH_GAIN if mr >= MR_THRESHOLD else PATH_MICE
            decisions.append(PathDecision(float(mr), g, path))
        return decisions
    if mode == "learned":
        if gammas is None:
            raise ContractError("learned routing requires gate outputs")
        for mr, g in zip(mr_rows, np.asarray(gammas, dtype=np.float64).ravel()):
            path = PATH_GAIN if g >= tau_gate else PATH_MICE
            decisions.append(PathDecision(float(mr), float(g), path))
        return decisions
    raise ContractError(f"unknown routing mode {mode!r}")
