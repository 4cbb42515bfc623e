"""Data container, CSV ingestion, and deterministic fold splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from pdml.errors import ConfigError, ContractError, CsvParseError, SchemaError

CSV_FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class Dataset:
    """Outcome ``y``, treatment ``d``, covariates ``x`` for N observations.

    Immutable after construction and safe to share read-only across workers.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        d = np.asarray(self.d, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise ContractError("x must be a 2-d matrix")
        n = y.shape[0]
        if n < 4:
            raise ContractError(f"need at least 4 observations, got {n}")
        if d.shape[0] != n or x.shape[0] != n:
            raise ContractError("y, d and x must have equal row counts")
        for name, arr in (("y", y), ("d", d), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"non-finite entries in {name}")
        if self.labels is not None and len(self.labels) != x.shape[1]:
            raise ContractError("labels length must match the number of covariates")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)
        for arr in (y, d, x):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class SingleSplit:
    """Two folds; the first (evaluation fold) gets the extra row when N is odd."""


@dataclass(frozen=True)
class CrossFit:
    k: int


SplitScheme = SingleSplit | CrossFit


@dataclass(frozen=True)
class FoldSplit:
    """Disjoint index sets covering 0..N-1."""

    folds: tuple[np.ndarray, ...]
    scheme: SplitScheme

    @property
    def n_total(self) -> int:
        return sum(len(f) for f in self.folds)

    def complement(self, k: int) -> np.ndarray:
        """All indices outside fold ``k``, sorted."""
        others = [f for i, f in enumerate(self.folds) if i != k]
        return np.sort(np.concatenate(others))


def split(n_total: int, scheme: SplitScheme, rng: np.random.Generator) -> FoldSplit:
    """Partition a random permutation of 0..n_total-1 into folds.

    Deterministic given the generator state. ``numpy.array_split`` assigns
    the extra rows to the leading folds, which under ``SingleSplit`` puts
    the odd row into the evaluation fold.
    """
    n_folds = 2 if isinstance(scheme, SingleSplit) else scheme.k
    if n_folds < 2:
        raise ConfigError("need at least 2 folds")
    if n_total < 2 * n_folds:
        raise ConfigError(f"{n_folds} folds need at least {2 * n_folds} rows, got {n_total}")
    perm = rng.permutation(n_total)
    folds = tuple(np.sort(chunk) for chunk in np.array_split(perm, n_folds))
    return FoldSplit(folds=folds, scheme=scheme)


def load_csv(path, y_col: str, d_col: str) -> Dataset:
    """Read a comma-separated file with a header row into a Dataset.

    The named outcome and treatment columns are required; every remaining
    column becomes a covariate, in file order. Cells must parse as floats
    ('.' decimal); a bad cell raises ``CsvParseError`` naming its 1-based
    data row and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in (y_col, d_col):
            if col not in header:
                raise SchemaError(f"{path}: required column {col!r} not found in header")
        y_idx, d_idx = header.index(y_col), header.index(d_col)
        x_cols = [i for i in range(len(header)) if i not in (y_idx, d_idx)]
        y, d, rows = [], [], []
        for row_num, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvParseError(f"{path}: row {row_num} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for i, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise CsvParseError(
                        f"{path}: row {row_num}, column {header[i]!r}: cannot parse {cell.strip()!r}"
                    ) from None
                if not np.isfinite(value):
                    raise CsvParseError(f"{path}: row {row_num}, column {header[i]!r}: non-finite value")
                parsed.append(value)
            y.append(parsed[y_idx])
            d.append(parsed[d_idx])
            rows.append([parsed[i] for i in x_cols])
    return Dataset(
        y=np.array(y), d=np.array(d), x=np.array(rows).reshape(len(rows), len(x_cols)),
        labels=tuple(header[i] for i in x_cols),
    )


def save_csv(ds: Dataset, path, y_col: str = "y", d_col: str = "d") -> None:
    """Write the same dialect ``load_csv`` reads; 17 significant digits so
    numeric values round-trip exactly."""
    labels = ds.labels if ds.labels is not None else tuple(f"x{i + 1}" for i in range(ds.p))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([y_col, d_col, *labels])
        for i in range(ds.n):
            writer.writerow(
                [CSV_FLOAT_FORMAT % v for v in (ds.y[i], ds.d[i], *ds.x[i])]
            )
