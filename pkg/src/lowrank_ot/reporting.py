"""Spectrum, loadings and matrix tables written by the command line tool.

All floats go through :func:`fmt` (shortest round-trip ``repr``) so that
identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .estimator import RANK_EPSILON, EstimationResult

logger = logging.getLogger(__name__)


def fmt(x: float) -> str:
    return repr(float(x))


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


@dataclass
class SpectrumReport:
    singular_values: np.ndarray
    shares: np.ndarray
    cumulative: np.ndarray
    rank: int

    def top_share(self, m: int = 3) -> float:
        if not self.cumulative.size:
            return 0.0
        return float(self.cumulative[min(m, self.cumulative.size) - 1])

    def headline(self, m: int = 3) -> str:
        return f"rank={self.rank} top{m}_cumulative_share={self.top_share(m):.2f}"

    def to_csv(self) -> str:
        rows = [["index", "singular_value", "share", "cumulative_share"]]
        for i, (s, sh, c) in enumerate(zip(self.singular_values, self.shares, self.cumulative), 1):
            rows.append([str(i), fmt(s), fmt(sh), fmt(c)])
        return _csv(rows)


def rank_and_shares(S, rank_epsilon: float = RANK_EPSILON) -> SpectrumReport:
    """Share of each singular value in the total, and the running total."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 1 or np.any(S < 0) or np.any(np.diff(S) > 0):
        raise ValueError("singular values must be a nonnegative, descending vector")
    total = S.sum()
    shares = S / total if total > 0 else np.zeros_like(S)
    cumulative = np.cumsum(shares)
    if total > 0:
        cumulative[-1] = 1.0
    return SpectrumReport(S, shares, cumulative, int(np.count_nonzero(S > rank_epsilon)))


@dataclass
class LoadingsTable:
    """One row per feature, a (U_m, V_m) column pair per dimension ``m``."""

    labels: list[str]
    singular_values: np.ndarray
    U: np.ndarray
    V: np.ndarray
    decimals: int = 2
    warnings: list[str] = field(default_factory=list)

    @property
    def top_k(self) -> int:
        return self.U.shape[1]

    def header_fields(self) -> list[str]:
        return [f"s_{m}={s:.{self.decimals}f}" for m, s in enumerate(self.singular_values, 1)]

    def _cell(self, x: float, rounded: bool) -> str:
        if math.isnan(x):
            return ""
        if not rounded:
            return fmt(x)
        v = round(float(x), self.decimals)
        return f"{v + 0.0:.{self.decimals}f}"

    def to_csv(self, rounded: bool = True) -> str:
        rows = [[""]]
        for h in self.header_fields():
            rows[0] += [h, ""]
        sub = ["feature"]
        for m in range(1, self.top_k + 1):
            sub += [f"U_{m}", f"V_{m}"]
        rows.append(sub)
        for i, label in enumerate(self.labels):
            row = [label]
            for m in range(self.top_k):
                row += [self._cell(self.U[i, m], rounded), self._cell(self.V[i, m], rounded)]
            rows.append(row)
        return _csv(rows)


def loadings_report(
    result: EstimationResult,
    labels_x: list[str],
    labels_y: list[str],
    top_k: int = 3,
    decimals: int = 2,
) -> LoadingsTable:
    """Loadings of the leading dimensions of the fitted affinity.

    Rows pair feature ``i`` of each side; when both sides carry the same
    label it is shown once, otherwise as ``"x_label | y_label"``. When the
    sides differ in length the shorter side's cells are left blank.
    ``top_k`` is clamped to the rank with a warning.
    """
    d1, d2 = result.A_hat.shape
    if len(labels_x) != d1 or len(labels_y) != d2:
        raise ValueError(
            f"label counts ({len(labels_x)}, {len(labels_y)}) do not match affinity shape {(d1, d2)}"
        )
    warnings = []
    k = top_k
    if top_k > result.rank:
        k = result.rank
        msg = f"top_k={top_k} exceeds rank {result.rank}; showing {k} dimension(s)"
        warnings.append(msg)
        logger.warning(msg)
    n = max(d1, d2)
    U = np.full((n, k), np.nan)
    V = np.full((n, k), np.nan)
    U[:d1] = result.U[:, :k]
    V[:d2] = result.V[:, :k]
    labels = []
    for i in range(n):
        lx = labels_x[i] if i < d1 else ""
        ly = labels_y[i] if i < d2 else ""
        labels.append(lx if lx == ly else f"{lx} | {ly}")
    return LoadingsTable(labels, result.S[:k], U, V, decimals, warnings)


def matrix_csv(M, row_labels=None, col_labels=None) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rows = []
    if col_labels is not None:
        rows.append((["feature"] if row_labels is not None else []) + list(col_labels))
    for i, r in enumerate(M):
        rows.append(([row_labels[i]] if row_labels is not None else []) + [fmt(v) for v in r])
    return _csv(rows)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_matrix(path) -> tuple[np.ndarray, list[str] | None]:
    """Read a numeric CSV matrix; an optional header row and label column are detected."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    labels = None
    if not all(_is_number(c) for c in rows[0]):
        labels, rows = rows[0], rows[1:]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if not all(_is_number(r[0]) for r in rows):
        rows = [r[1:] for r in rows]
        if labels is not None:
            labels = labels[1:]
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"{path}: row {i + 1} has {len(r)} fields, expected {width}")
        if not all(_is_number(c) for c in r):
            raise ValueError(f"{path}: non-numeric cell in row {i + 1}")
    M = np.array([[float(c) for c in r] for r in rows])
    if labels is not None and len(labels) != width:
        raise ValueError(f"{path}: header has {len(labels)} labels for {width} columns")
    return M, labels


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """What was run, on which inputs, with which settings, producing which files."""

    command: str
    argv: list[str]
    config: dict
    inputs: dict[str, str]
    seed: int | None
    version: str
    backend: str
    started: str
    finished: str = ""
    outputs: list[str] = field(default_factory=list)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
