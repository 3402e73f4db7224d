"""Benchmark runner: fit every requested method on the train split,
impute the test split under the test mask, score imputation RMSE and
downstream AUROC with one shared probe, and emit a reproducible report.

Statistical methods (mean, chained equations) fit on the masked train
split, as they would in deployment. Neural methods train on the complete
train split under curriculum masks, which is what their training
contract requires. Per-method RNG streams derive from (seed, method
label) so reports are identical whether methods run sequentially or in
parallel.
"""

from __future__ import annotations

import json
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import DataMatrix, LabelVector, MaskMatrix, apply_mask, compute_mask, fit_normalizer, load_csv, split
from ..errors import DataError
from ..gain import gain_impute, gain_train
from ..masking import draw_mask
from ..mice import mice_fit_impute, mice_transform
from ..routing import PATH_MICE
from ..training import impute_with_uncertainty, train
from .baselines import LogisticProbe, mean_impute
from .config import MaskingConfig, MethodConfig, RunConfig, build_train_config, resolve_curriculum
from .metrics import auroc, rmse_masked
from .synth import SynthSpec, synth_generate

__all__ = ["MethodResult", "BenchmarkReport", "run_benchmark",
           "apply_masking", "method_seed"]


def method_seed(seed: int, label: str) -> int:
    """Stable per-method stream: mixes the run seed with the label."""
    return (seed * 1_000_003 + zlib.crc32(label.encode())) % (2 ** 31)


@dataclass
class MethodResult:
    label: str
    rmse: float | None = None
    rmse_by_group: dict[str, float] | None = None
    auroc: float | None = None
    seconds: float = 0.0
    path_fractions: dict[str, float] | None = None
    probe_checksum: str | None = None
    error: str | None = None


@dataclass
class BenchmarkReport:
    seed: int
    config: dict
    methods: dict[str, MethodResult] = field(default_factory=dict)

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {"seed": self.seed, "config": self.config, "methods": {}}
        for label, res in self.methods.items():
            entry = asdict(res)
            if not include_timing:
                entry.pop("seconds")
            out["methods"][label] = entry
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "BenchmarkReport":
        report = cls(seed=raw["seed"], config=raw["config"])
        for label, entry in raw["methods"].items():
            entry = dict(entry)
            entry.setdefault("seconds", 0.0)
            report.methods[label] = MethodResult(**entry)
        return report

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2,
                          sort_keys=True)

    def to_csv(self) -> str:
        lines = ["method,rmse,auroc,seconds,frac_mice,frac_gain,error"]
        for label, r in self.methods.items():
            frac_m = r.path_fractions.get("mice") if r.path_fractions else ""
            frac_g = r.path_fractions.get("gain") if r.path_fractions else ""
            lines.append(
                f"{label},{_fmt(r.rmse)},{_fmt(r.auroc)},{r.seconds:.3f},"
                f"{_fmt(frac_m)},{_fmt(frac_g)},{r.error or ''}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return "" if v in (None, "") else repr(float(v))


def apply_masking(x: DataMatrix, cfg: MaskingConfig,
                  rng: np.random.Generator
                  ) -> tuple[MaskMatrix, np.ndarray | None, list[str]]:
    """Draw the benchmark mask; mixtures assign row groups first.

    Returns (mask, per-row group ids or None, group labels)."""
    if cfg.spec is not None:
        mask = draw_mask(x, cfg.spec.to_spec(), rng)
        return mask, None, []
    n = x.n_rows
    perm = rng.permutation(n)
    sizes = [int(np.floor(c.fraction * n)) for c in cfg.mixture[:-1]]
    sizes.append(n - sum(sizes))
    bits = np.ones(x.values.shape, dtype=np.int8)
    groups = np.zeros(n, dtype=int)
    labels = []
    off = 0
    for gi, (comp, size) in enumerate(zip(cfg.mixture, sizes)):
        rows = perm[off:off + size]
        off += size
        labels.append(f"{gi}:{comp.spec.mechanism}")
        if size == 0:
            continue
        sub = DataMatrix(x.values[rows], list(x.column_names),
                         list(x.column_kinds))
        bits[rows] = draw_mask(sub, comp.spec.to_spec(), rng).bits
        groups[rows] = gi
    return MaskMatrix(bits), groups, labels


def _prepare(rc: RunConfig):
    if rc.dataset.synth is not None:
        s = rc.dataset.synth
        spec = SynthSpec(n_rows=s.rows, n_cols=s.cols, corr_kind=s.corr.kind,
                         rho=s.corr.rho, label_weights=s.label_weights,
                         label_bias=s.label_bias, label_noise=s.label_noise)
        x, y = synth_generate(spec, seed=method_seed(rc.seed, "synth"))
    else:
        x, y = load_csv(rc.dataset.csv.path, label_col=rc.dataset.csv.label_col)
    if np.isnan(x.values).any():
        raise DataError("benchmark needs fully observed input data "
                        "(ground truth is required to score imputations)")
    m = compute_mask(x)
    (xtr, mtr, ytr), _, (xte, mte, yte) = split(
        x, m, y, (rc.split.train, rc.split.val, rc.split.test),
        seed=method_seed(rc.seed, "split"))
    norm = fit_normalizer(xtr, mtr)
    return norm.apply(xtr), ytr, norm.apply(xte), yte


def _cap_rows(rc: RunConfig, rng: np.random.Generator, x: DataMatrix,
              y: LabelVector | None):
    """Deterministic training-row subsample for the neural methods."""
    cap = rc.train.max_train_rows
    if cap is None or cap >= x.n_rows:
        return x, y
    keep = rng.permutation(x.n_rows)[:cap]
    x_fit = DataMatrix(x.values[keep], list(x.column_names),
                       list(x.column_kinds))
    y_fit = LabelVector(y.y[keep]) if y is not None else None
    return x_fit, y_fit


def _group_rmse(truth: np.ndarray, filled: np.ndarray, bits: np.ndarray,
                groups: np.ndarray | None, labels: list[str]
                ) -> dict[str, float] | None:
    if groups is None:
        return None
    out = {}
    for gi, label in enumerate(labels):
        rows = groups == gi
        miss = (bits == 0) & rows[:, None]
        if miss.any():
            diff = truth[miss] - filled[miss]
            out[label] = float(np.sqrt(np.mean(diff ** 2)))
    return out


def _run_method(method: MethodConfig, rc: RunConfig, data) -> MethodResult:
    label = method.label()
    (x_train, y_train, x_test, y_test,
     train_mask, test_mask, groups, glabels) = data
    result = MethodResult(label=label)
    seed = method_seed(rc.seed, label)
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    try:
        masked_train = apply_mask(x_train, train_mask)
        masked_test = apply_mask(x_test, test_mask)

        if method.name == "mean":
            fit_res, means = mean_impute(masked_train, train_mask)
            train_fill = fit_res.values
            test_fill, _ = mean_impute(masked_test, test_mask, means)
            test_fill = test_fill.values
        elif method.name == "mice":
            fit_res, model = mice_fit_impute(masked_train, train_mask,
                                             rc.mice.to_config(), rng)
            train_fill = fit_res.values
            test_fill = mice_transform(model, masked_test, test_mask).values
        elif method.name == "gain":
            cfg = rc.gain.to_config(seed)
            x_fit, _ = _cap_rows(rc, rng, x_train, y_train)
            trained = gain_train(x_fit, compute_mask(x_fit), cfg,
                                 resolve_curriculum(rc))
            train_fill = gain_impute(trained.generator, masked_train,
                                     train_mask)
            test_fill = gain_impute(trained.generator, masked_test, test_mask)
        else:
            tc = build_train_config(rc, seed, method.variant)
            x_fit, y_fit = _cap_rows(rc, rng, x_train, y_train)
            state = train(x_fit, y_fit, tc)
            # deployment fit of the statistical branch on the visible data
            child = np.random.default_rng(int(rng.integers(2 ** 63)))
            state.model.fit_mice(masked_train, train_mask, child)
            state.model.cfg.stochastic_inference = False
            train_fill = impute_with_uncertainty(
                state, masked_train, train_mask, k=1).values
            test_fill = impute_with_uncertainty(
                state, masked_test, test_mask, k=1).values
            decisions = state.model.decisions(test_mask)
            frac_mice = float(np.mean([d.path == PATH_MICE for d in decisions]))
            result.path_fractions = {"mice": frac_mice, "gain": 1.0 - frac_mice}

        result.rmse = rmse_masked(x_test.values, test_fill, test_mask)
        result.rmse_by_group = _group_rmse(x_test.values, test_fill,
                                           test_mask.bits, groups, glabels)
        if y_train is not None and y_test is not None:
            probe = LogisticProbe(x_train.n_cols)
            result.probe_checksum = probe.checksum
            probe.fit(train_fill, y_train.y)
            result.auroc = auroc(y_test.y, probe.predict(test_fill))
    except Exception as exc:  # recorded; remaining methods proceed
        result.error = f"{type(exc).__name__}: {exc}"
    result.seconds = time.perf_counter() - t0
    return result


def run_benchmark(rc: RunConfig) -> BenchmarkReport:
    x_train, y_train, x_test, y_test = _prepare(rc)
    train_mask, _, _ = apply_masking(
        x_train, rc.masking,
        np.random.default_rng(method_seed(rc.seed, "train-mask")))
    test_mask, groups, glabels = apply_masking(
        x_test, rc.masking,
        np.random.default_rng(method_seed(rc.seed, "test-mask")))

    data = (x_train, y_train, x_test, y_test, train_mask, test_mask,
            groups, glabels)
    report = BenchmarkReport(seed=rc.seed,
                             config=json.loads(rc.model_dump_json()))
    if rc.threads > 1:
        with ThreadPoolExecutor(max_workers=rc.threads) as pool:
            results = list(pool.map(lambda m: _run_method(m, rc, data),
                                    rc.methods))
    else:
        results = [_run_method(m, rc, data) for m in rc.methods]
    for res in results:
        report.methods[res.label] = res
    return report
