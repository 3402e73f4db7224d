"""Typed containers for incomplete tabular data plus CSV ingestion,
z-score normalization, and deterministic splitting.

Missing cells are NaN internally; CSV uses empty fields plus a
configurable token set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError

DEFAULT_MISSING_TOKENS = frozenset({"", "NA", "NaN", "null"})

PROV_OBSERVED = "O"
PROV_MICE = "M"
PROV_GAIN = "G"
PROV_FUSED = "F"


@dataclass
class DataMatrix:
    """n x d float table; missing cells carry NaN."""

    values: np.ndarray
    column_names: list[str]
    column_kinds: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractError("DataMatrix values must be 2-D")
        if len(self.column_names) != self.values.shape[1]:
            raise ContractError("column_names length must match column count")
        if not self.column_kinds:
            self.column_kinds = ["numeric"] * self.values.shape[1]
        observed = self.values[~np.isnan(self.values)]
        if observed.size and not np.all(np.isfinite(observed)):
            raise DataError("non-missing cells must be finite")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "DataMatrix":
        return DataMatrix(self.values.copy(), list(self.column_names),
                          list(self.column_kinds))


@dataclass
class MaskMatrix:
    """Binary observed/missing indicator paired with a DataMatrix."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits)
        if not np.isin(self.bits, (0, 1)).all():
            raise ContractError("mask bits must be 0 or 1")
        self.bits = self.bits.astype(np.int8)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def consistent_with(self, x: DataMatrix) -> bool:
        return bool(np.array_equal(self.bits == 0, np.isnan(x.values)))


@dataclass
class LabelVector:
    """Binary downstream-task labels."""

    y: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim != 1:
            raise ContractError("labels must be 1-D")
        if self.y.size and not np.isin(self.y, (0.0, 1.0)).all():
            raise DataError("labels must be binary {0,1}")

    def __len__(self) -> int:
        return self.y.size


@dataclass
class ImputationResult:
    """Completed matrix with per-cell provenance and optional uncertainty.

    Provenance codes: O observed, M chained-equation fill, G generator
    fill, F fused fill.
    """

    values: np.ndarray
    provenance: np.ndarray
    uncertainty: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.provenance = np.asarray(self.provenance, dtype="<U1")
        if self.provenance.shape != self.values.shape:
            raise ContractError("provenance shape must match values")
        if self.uncertainty is not None:
            self.uncertainty = np.asarray(self.uncertainty, dtype=np.float64)
            if self.uncertainty.shape != self.values.shape:
                raise ContractError("uncertainty shape must match values")


def compute_mask(x: DataMatrix) -> MaskMatrix:
    """Mask bit 0 exactly where the paired cell is missing."""
    return MaskMatrix((~np.isnan(x.values)).astype(np.int8))


def apply_mask(x: DataMatrix, m: MaskMatrix) -> DataMatrix:
    """Copy of x with cells hidden wherever the mask says missing."""
    if m.shape != x.values.shape:
        raise ContractError("mask shape must match data shape")
    out = x.values.copy()
    out[m.bits == 0] = np.nan
    return DataMatrix(out, list(x.column_names), list(x.column_kinds))


def _parse_cell(raw: str, missing_tokens, row: int, col: str) -> float:
    token = raw.strip()
    if token in missing_tokens:
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise DataError(
            f"unparseable numeric cell at row {row}, column {col!r}: {raw!r}"
        ) from None


def load_csv(path, missing_tokens=DEFAULT_MISSING_TOKENS, label_col: str | None = None,
             categorical_cols: set[str] | None = None,
             numeric_cols: set[str] | None = None
             ) -> tuple[DataMatrix, LabelVector | None]:
    """Read a headered CSV into a DataMatrix (+ optional label column).

    Empty fields and any token in `missing_tokens` become missing cells.
    Columns listed in `categorical_cols`, or whose non-missing entries do
    not all parse as numbers, are one-hot encoded; a missing categorical
    yields a fully missing one-hot group. Columns in `numeric_cols` must
    parse as numbers; an unparseable cell there is an ingestion error.
    """
    missing_tokens = set(missing_tokens)
    categorical_cols = set(categorical_cols or ())
    numeric_cols = set(numeric_cols or ())
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty file, header required")
    header = [h.strip() for h in rows[0]]
    width = len(header)
    body = rows[1:]
    for i, r in enumerate(body):
        if len(r) != width:
            raise DataError(f"ragged row {i + 1}: expected {width} fields, got {len(r)}")

    columns: dict[str, list[str]] = {name: [] for name in header}
    for r in body:
        for name, cell in zip(header, r):
            columns[name].append(cell)

    labels = None
    if label_col is not None:
        if label_col not in columns:
            raise DataError(f"label column {label_col!r} not in header")
        raw = columns.pop(label_col)
        header = [h for h in header if h != label_col]
        vals = [_parse_cell(c, missing_tokens, i + 1, label_col)
                for i, c in enumerate(raw)]
        arr = np.asarray(vals)
        if np.isnan(arr).any():
            raise DataError(f"label column {label_col!r} has missing entries")
        labels = LabelVector(arr)

    out_cols: list[np.ndarray] = []
    out_names: list[str] = []
    out_kinds: list[str] = []
    n = len(body)
    for name in header:
        raw = columns[name]
        non_missing = [c.strip() for c in raw if c.strip() not in missing_tokens]
        is_categorical = name in categorical_cols
        if not is_categorical and name not in numeric_cols and non_missing:
            try:
                for c in non_missing:
                    float(c)
            except ValueError:
                is_categorical = True
        if is_categorical:
            cats = sorted({c.strip() for c in raw if c.strip() not in missing_tokens})
            for cat in cats:
                col = np.full(n, np.nan)
                for i, c in enumerate(raw):
                    if c.strip() not in missing_tokens:
                        col[i] = 1.0 if c.strip() == cat else 0.0
                out_cols.append(col)
                out_names.append(f"{name}={cat}")
                out_kinds.append(f"onehot:{name}")
        else:
            col = np.asarray([
                _parse_cell(c, missing_tokens, i + 1, name)
                for i, c in enumerate(raw)
            ])
            out_cols.append(col)
            out_names.append(name)
            out_kinds.append("numeric")

    values = np.column_stack(out_cols) if out_cols else np.zeros((n, 0))
    return DataMatrix(values, out_names, out_kinds), labels


def save_csv(x: DataMatrix, path, labels: LabelVector | None = None,
             label_col: str = "label") -> None:
    """Write a DataMatrix (missing cells as empty fields) to CSV."""
    header = list(x.column_names)
    if labels is not None:
        header.append(label_col)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(x.n_rows):
            row = ["" if np.isnan(v) else repr(float(v)) for v in x.values[i]]
            if labels is not None:
                row.append(repr(float(labels.y[i])))
            writer.writerow(row)


@dataclass
class Normalizer:
    """Per-column z-score statistics from observed training cells only.

    Columns with fewer than two observed cells, zero variance, or one-hot
    kind are passed through unscaled. Sample (n-1) standard deviation.
    """

    mean: np.ndarray
    std: np.ndarray
    scaled: np.ndarray  # bool per column

    def apply(self, x: DataMatrix) -> DataMatrix:
        out = x.values.copy()
        for j in range(out.shape[1]):
            if self.scaled[j]:
                out[:, j] = (out[:, j] - self.mean[j]) / self.std[j]
        return DataMatrix(out, list(x.column_names), list(x.column_kinds))

    def invert(self, x: DataMatrix) -> DataMatrix:
        out = x.values.copy()
        for j in range(out.shape[1]):
            if self.scaled[j]:
                out[:, j] = out[:, j] * self.std[j] + self.mean[j]
        return DataMatrix(out, list(x.column_names), list(x.column_kinds))


def fit_normalizer(x: DataMatrix, m: MaskMatrix) -> Normalizer:
    d = x.n_cols
    mean = np.zeros(d)
    std = np.ones(d)
    scaled = np.zeros(d, dtype=bool)
    for j in range(d):
        if x.column_kinds[j] != "numeric":
            continue
        obs = x.values[m.bits[:, j] == 1, j]
        if obs.size < 2:
            continue
        s = obs.std(ddof=1)
        if s <= 0.0 or not np.isfinite(s):
            continue
        mean[j] = obs.mean()
        std[j] = s
        scaled[j] = True
    return Normalizer(mean, std, scaled)


def split(x: DataMatrix, m: MaskMatrix, y: LabelVector | None,
          fractions: tuple[float, float, float], seed: int):
    """Deterministic row-disjoint train/val/test partition.

    Sizes: floor for the first two parts, remainder to the last.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or \
            abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"fractions must be three non-negatives summing to 1, got {fractions}")
    n = x.n_rows
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    chunks = (order[:n_train], order[n_train:n_train + n_val],
              order[n_train + n_val:])
    parts = []
    for idx in chunks:
        xi = DataMatrix(x.values[idx], list(x.column_names), list(x.column_kinds))
        mi = MaskMatrix(m.bits[idx])
        yi = LabelVector(y.y[idx]) if y is not None else None
        parts.append((xi, mi, yi))
    return tuple(parts)
