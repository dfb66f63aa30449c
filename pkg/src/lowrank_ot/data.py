"""Tabular couple data to numeric feature matrices, and a synthetic market simulator.

Schema files are JSON::

    {"columns": [
        {"name": "educ_h", "side": 1, "kind": "continuous", "missing": "forbid"},
        {"name": "caste_w", "side": 2, "kind": "categorical",
         "categories": ["a", "b"]},
        ...
    ]}

``kind`` is one of continuous, categorical, ordinal, skip; ``missing`` is one
of impute_mean_with_indicator, drop_row, forbid (default forbid).
Categorical columns are fully one-hot encoded (no reference level is
dropped). Continuous and ordinal columns are centered and, with
``standardize`` on, scaled to unit variance. Indicator columns are centered
only.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .likelihood import FeaturePair
from .ot_core import DiscreteMarginal, IPFPSettings, build_surplus, solve

logger = logging.getLogger(__name__)

KINDS = ("continuous", "categorical", "ordinal", "skip")
POLICIES = ("impute_mean_with_indicator", "drop_row", "forbid")


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    side: int
    kind: str
    missing: str = "forbid"
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.side not in (1, 2):
            raise SchemaError(f"column {self.name!r}: side must be 1 or 2")
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: kind must be one of {KINDS}")
        if self.missing not in POLICIES:
            raise SchemaError(f"column {self.name!r}: missing policy must be one of {POLICIES}")
        if self.categories is not None:
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))


@dataclass(frozen=True)
class SchemaSpec:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        for side in (1, 2):
            if not any(c.side == side and c.kind != "skip" for c in self.columns):
                raise SchemaError(f"side {side} has no non-skip column")

    @classmethod
    def from_dict(cls, d: dict) -> SchemaSpec:
        try:
            cols = d["columns"]
        except (KeyError, TypeError):
            raise SchemaError("schema needs a 'columns' list") from None
        return cls(tuple(ColumnSpec(**c) for c in cols))

    @classmethod
    def from_json(cls, path) -> SchemaSpec:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def side(self, side: int) -> list[ColumnSpec]:
        return [c for c in self.columns if c.side == side and c.kind != "skip"]


@dataclass
class RawDataset:
    """Typed columns: float arrays (NaN = missing) or object arrays (None = missing)."""

    columns: dict[str, np.ndarray]
    n_rows: int
    warnings: list[str] = field(default_factory=list)
    dropped_rows: int = 0


def _parse_float(s: str) -> float | None:
    try:
        v = float(s)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_table(path, schema: SchemaSpec) -> RawDataset:
    """Read a UTF-8 comma-separated file with a header row; empty cells are missing."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    header = list(df.columns)
    absent = [c.name for c in schema.columns if c.name not in header]
    if absent:
        raise DataError(f"header is missing schema column(s) {absent}")
    warnings = []
    listed = {c.name for c in schema.columns}
    for extra in header:
        if extra not in listed:
            warnings.append(f"column {extra!r} is not in the schema and was ignored")

    n = len(df)
    drop = np.zeros(n, dtype=bool)
    columns: dict[str, np.ndarray] = {}
    for spec in schema.columns:
        if spec.kind == "skip":
            continue
        cells = [s.strip() for s in df[spec.name].tolist()]
        missing = np.array([s == "" for s in cells], dtype=bool)
        if spec.kind == "categorical":
            col = np.array([None if m else s for s, m in zip(cells, missing)], dtype=object)
        else:
            vals = np.full(n, np.nan)
            for i, s in enumerate(cells):
                if missing[i]:
                    continue
                v = _parse_float(s)
                if v is None:
                    if spec.missing == "forbid":
                        raise DataError(f"row {i + 1}, column {spec.name!r}: cannot parse {s!r} as a number")
                    warnings.append(f"row {i + 1}, column {spec.name!r}: unparseable {s!r} treated as missing")
                    missing[i] = True
                else:
                    vals[i] = v
            col = vals
        if missing.any():
            if spec.missing == "forbid":
                first = int(np.flatnonzero(missing)[0]) + 1
                raise DataError(f"row {first}, column {spec.name!r}: missing value under policy 'forbid'")
            if spec.missing == "drop_row":
                drop |= missing
        columns[spec.name] = col

    if drop.any():
        keep = ~drop
        columns = {k: v[keep] for k, v in columns.items()}
        warnings.append(f"dropped {int(drop.sum())} row(s) with missing values")
    for w in warnings:
        logger.warning(w)
    return RawDataset(columns, int((~drop).sum()), warnings, int(drop.sum()))


@dataclass
class EncodedColumn:
    """Provenance and transform of one encoded feature."""

    label: str
    side: int
    source: str
    kind: str  # continuous | indicator | missing_indicator
    category: str | None = None
    fill: float | None = None
    mean: float = 0.0
    scale: float = 1.0


@dataclass
class Encoding:
    """Fitted encoding; :meth:`transform` applies it to new rows without refitting."""

    columns: list[EncodedColumn]
    standardize: bool = True

    def side(self, side: int) -> list[EncodedColumn]:
        return [c for c in self.columns if c.side == side]

    @property
    def labels_x(self) -> list[str]:
        return [c.label for c in self.side(1)]

    @property
    def labels_y(self) -> list[str]:
        return [c.label for c in self.side(2)]

    def _raw_matrix(self, raw: RawDataset, side: int, warnings: list[str]) -> np.ndarray:
        cols = []
        for c in self.side(side):
            v = raw.columns[c.source]
            if c.kind == "continuous":
                x = np.asarray(v, dtype=float)
                cols.append(np.where(np.isnan(x), c.fill, x))
            elif c.kind == "missing_indicator":
                miss = np.isnan(v) if v.dtype.kind == "f" else np.array([e is None for e in v])
                cols.append(miss.astype(float))
            else:
                cols.append(np.array([e == c.category for e in v], dtype=float))
        # unseen categories: all of a source's indicators are zero on a non-missing row
        for source in dict.fromkeys(c.source for c in self.side(side) if c.kind == "indicator"):
            known = {c.category for c in self.side(side) if c.source == source and c.kind == "indicator"}
            unseen = sorted({e for e in raw.columns[source] if e is not None and e not in known})
            if unseen:
                warnings.append(f"column {source!r}: unseen categories {unseen} encoded as all-zero indicators")
        return np.column_stack(cols)

    def transform(self, raw: RawDataset) -> tuple[FeaturePair, list[str]]:
        warnings: list[str] = []
        mats = []
        for side in (1, 2):
            M = self._raw_matrix(raw, side, warnings)
            means = np.array([c.mean for c in self.side(side)])
            scales = np.array([c.scale for c in self.side(side)])
            mats.append((M - means) / scales)
        for w in warnings:
            logger.warning(w)
        return FeaturePair(mats[0], mats[1], allow_constant=True), warnings

    def to_dict(self) -> dict:
        return {"standardize": self.standardize, "columns": [asdict(c) for c in self.columns]}

    @classmethod
    def from_dict(cls, d: dict) -> Encoding:
        return cls([EncodedColumn(**c) for c in d["columns"]], d.get("standardize", True))


@dataclass
class EncodedData:
    pair: FeaturePair
    encoding: Encoding
    warnings: list[str] = field(default_factory=list)

    @property
    def labels_x(self) -> list[str]:
        return self.encoding.labels_x

    @property
    def labels_y(self) -> list[str]:
        return self.encoding.labels_y


def _fit_columns(raw: RawDataset, spec: ColumnSpec, standardize: bool) -> list[EncodedColumn]:
    v = raw.columns[spec.name]
    out = []
    if spec.kind in ("continuous", "ordinal"):
        x = np.asarray(v, dtype=float)
        miss = np.isnan(x)
        if miss.all():
            raise DataError(f"column {spec.name!r} has no observed values")
        fill = float(x[~miss].mean())
        filled = np.where(miss, fill, x)
        sd = float(filled.std())
        if sd == 0:
            raise DataError(f"column {spec.name!r} is constant")
        out.append(
            EncodedColumn(spec.name, spec.side, spec.name, "continuous", None, fill,
                          float(filled.mean()), sd if standardize else 1.0)
        )
    else:
        present = [e for e in v if e is not None]
        miss = np.array([e is None for e in v])
        cats = list(spec.categories) if spec.categories else sorted(set(present))
        if len(cats) < 2:
            raise DataError(f"column {spec.name!r} has a single category; a constant column cannot be encoded")
        for cat in cats:
            ind = np.array([e == cat for e in v], dtype=float)
            out.append(
                EncodedColumn(f"{spec.name}={cat}", spec.side, spec.name, "indicator", cat,
                              mean=float(ind.mean()))
            )
    if miss.any():
        out.append(
            EncodedColumn(f"{spec.name}_missing", spec.side, spec.name, "missing_indicator",
                          mean=float(miss.mean()))
        )
    return out


def encode_features(raw: RawDataset, schema: SchemaSpec, standardize: bool = True) -> EncodedData:
    """Fit the encoding on ``raw`` and apply it.

    A missing-value indicator is added only for columns that actually have
    missing cells, so no all-zero feature is ever produced.
    """
    cols: list[EncodedColumn] = []
    for side in (1, 2):
        for spec in schema.side(side):
            if spec.name not in raw.columns:
                raise DataError(f"dataset lacks schema column {spec.name!r}")
            cols.extend(_fit_columns(raw, spec, standardize))
    enc = Encoding(cols, standardize)
    pair, warnings = enc.transform(raw)
    return EncodedData(FeaturePair(pair.X, pair.Y), enc, raw.warnings + warnings)


def _standardized(M: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = M.mean(axis=0)
    sd = M.std(axis=0)
    sd[sd == 0] = 1.0
    return (M - mean) / sd, mean, sd


def simulate_market(
    A_true,
    n: int,
    sampler: str = "normal",
    seed: int = 0,
    settings: IPFPSettings | None = None,
) -> EncodedData:
    """Draw ``n`` matched pairs from the entropic matching model at ``A_true``.

    ``n`` x-types and ``n`` y-types are sampled i.i.d. from ``sampler``
    ("normal": standard normal coordinates, "uniform": unit-variance uniform),
    the equilibrium coupling on their uniform marginals is solved at
    temperature 1, and ``n`` couples are drawn i.i.d. from it. The returned
    features are re-standardized.
    """
    A_true = np.asarray(A_true, dtype=float)
    if A_true.ndim != 2 or not np.all(np.isfinite(A_true)):
        raise ValueError("A_true must be a finite matrix")
    if n < 2:
        raise ValueError("need n >= 2")
    settings = settings or IPFPSettings()
    rng = np.random.default_rng(seed)
    d1, d2 = A_true.shape
    if sampler == "normal":
        Xs = rng.standard_normal((n, d1))
        Ys = rng.standard_normal((n, d2))
    elif sampler == "uniform":
        Xs = rng.uniform(-math.sqrt(3), math.sqrt(3), (n, d1))
        Ys = rng.uniform(-math.sqrt(3), math.sqrt(3), (n, d2))
    else:
        raise ValueError(f"unknown sampler {sampler!r}")

    mu = DiscreteMarginal.uniform(n)
    sol = solve(build_surplus(Xs, Ys, A_true), mu, mu, settings.tol, settings.max_iter)
    p = sol.mass().ravel()
    p /= p.sum()
    cells = rng.choice(p.size, size=n, p=p)
    del p, sol
    X, mx, sx = _standardized(Xs[cells // n])
    Y, my, sy = _standardized(Ys[cells % n])

    cols = [EncodedColumn(f"x{k + 1}", 1, f"x{k + 1}", "continuous", None, None, float(mx[k]), float(sx[k]))
            for k in range(d1)]
    cols += [EncodedColumn(f"y{k + 1}", 2, f"y{k + 1}", "continuous", None, None, float(my[k]), float(sy[k]))
             for k in range(d2)]
    return EncodedData(FeaturePair(X, Y), Encoding(cols, True))
