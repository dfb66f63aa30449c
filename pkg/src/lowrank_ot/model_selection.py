"""Repeated k-fold cross-validation over a grid of nuclear-norm weights.

Two held-out criteria are recorded per (lambda, repeat, fold) cell:

* ``nll``: ``W(A) - E_test[Phi_A]``, with ``W`` from a fresh IPFP solve on the
  held-out sample's own uniform marginals;
* ``mismatch``: ``||E_{pi^A}[XY^T] - E_test[XY^T]||_F`` on the same solve.

Within a split, features are re-centered on training means and non-binary
columns re-scaled by training standard deviations before fitting, so the
held-out fold never informs the transform.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from .estimator import EstimatorConfig, fit
from .likelihood import FeaturePair, LikelihoodSession
from .ot_core import IPFPConvergenceError

logger = logging.getLogger(__name__)

CRITERIA = ("nll", "mismatch")
MAX_FAILED_FRACTION = 0.2


@dataclass(frozen=True)
class CvPlan:
    lambda_grid: tuple[float, ...]
    k: int = 5
    repeats: int = 2
    seed: int = 0

    def __post_init__(self):
        grid = tuple(float(x) for x in self.lambda_grid)
        if not grid:
            raise ValueError("lambda_grid must be nonempty")
        if any(not (math.isfinite(x) and x >= 0) for x in grid):
            raise ValueError("lambda_grid entries must be finite and nonnegative")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("lambda_grid must be strictly ascending")
        if self.k < 2:
            raise ValueError("need k >= 2 folds")
        if self.repeats < 1:
            raise ValueError("need repeats >= 1")
        object.__setattr__(self, "lambda_grid", grid)


def make_folds(n: int, plan: CvPlan) -> np.ndarray:
    """Fold labels, shape ``(repeats, n)``; fold sizes differ by at most one."""
    if n < plan.k:
        raise ValueError(f"cannot split {n} observations into {plan.k} folds")
    rng = np.random.default_rng(plan.seed)
    labels = np.empty((plan.repeats, n), dtype=np.int64)
    base = np.arange(n) % plan.k
    for r in range(plan.repeats):
        labels[r, rng.permutation(n)] = base
    return labels


def _split_transform(train: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = train.mean(axis=0)
    scale = np.ones(train.shape[1])
    for j in range(train.shape[1]):
        if np.unique(train[:, j]).size > 2:
            sd = train[:, j].std()
            if sd > 0:
                scale[j] = sd
    return (train - mean) / scale, (test - mean) / scale


def split_pairs(data: FeaturePair, train_idx, test_idx, standardize: bool = True):
    """Training and held-out pairs with training-only standardization."""
    X_tr, X_te = data.X[train_idx], data.X[test_idx]
    Y_tr, Y_te = data.Y[train_idx], data.Y[test_idx]
    if standardize:
        X_tr, X_te = _split_transform(X_tr, X_te)
        Y_tr, Y_te = _split_transform(Y_tr, Y_te)
    return (
        FeaturePair(X_tr, Y_tr, allow_constant=True),
        FeaturePair(X_te, Y_te, allow_constant=True),
    )


def heldout_errors(A, test: FeaturePair, config: EstimatorConfig) -> tuple[float, float]:
    """(held-out nll, held-out covariance mismatch) of a trained affinity."""
    ev = LikelihoodSession(test, config.ipfp).evaluate(A)
    return ev.value, float(np.linalg.norm(ev.gradient))


@dataclass
class CvSummary:
    lambdas: np.ndarray
    mean_nll: np.ndarray
    sd_nll: np.ndarray
    se_nll: np.ndarray
    mean_mismatch: np.ndarray
    sd_mismatch: np.ndarray
    se_mismatch: np.ndarray
    n_ok: np.ndarray
    valid: np.ndarray

    @classmethod
    def from_raw(cls, lambdas, nll, mismatch) -> CvSummary:
        """Aggregate raw arrays of shape ``(n_lambda, n_experiments)``; NaN marks a failed cell."""
        nll = np.asarray(nll, dtype=float)
        mismatch = np.asarray(mismatch, dtype=float)
        ok = ~np.isnan(nll)
        n_ok = ok.sum(axis=1)
        valid = (1 - n_ok / nll.shape[1]) <= MAX_FAILED_FRACTION

        def agg(v):
            mean = np.full(v.shape[0], np.nan)
            sd = np.full(v.shape[0], np.nan)
            for i in range(v.shape[0]):
                x = v[i][ok[i]]
                if x.size:
                    mean[i] = x.mean()
                    sd[i] = x.std(ddof=1) if x.size > 1 else 0.0
            with np.errstate(invalid="ignore", divide="ignore"):
                se = sd / np.sqrt(n_ok)
            return mean, sd, se

        m1, s1, e1 = agg(nll)
        m2, s2, e2 = agg(mismatch)
        return cls(np.asarray(lambdas, dtype=float), m1, s1, e1, m2, s2, e2, n_ok, valid)


@dataclass
class CvCurve:
    """Raw held-out values with shape ``(n_lambda, repeats, k)`` plus their summary."""

    plan: CvPlan
    nll: np.ndarray
    mismatch: np.ndarray
    ranks: np.ndarray
    summary: CvSummary

    @property
    def lambdas(self) -> np.ndarray:
        return self.summary.lambdas

    def raw_rows(self):
        """(lambda, criterion, repeat, fold, value) in fixed grid order."""
        for li, lam in enumerate(self.plan.lambda_grid):
            for crit, arr in (("nll", self.nll), ("mismatch", self.mismatch)):
                for r in range(self.plan.repeats):
                    for f in range(self.plan.k):
                        yield lam, crit, r, f, float(arr[li, r, f])

    def raw_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "criterion", "repeat", "fold", "value"])
        for lam, crit, r, f, v in self.raw_rows():
            w.writerow([repr(lam), crit, r, f, repr(v)])
        return buf.getvalue()

    def summary_csv(self) -> str:
        s = self.summary
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "mean_nll", "se_nll", "mean_mismatch", "se_mismatch", "valid"])
        for i, lam in enumerate(s.lambdas):
            w.writerow([
                repr(float(lam)), repr(float(s.mean_nll[i])), repr(float(s.se_nll[i])),
                repr(float(s.mean_mismatch[i])), repr(float(s.se_mismatch[i])),
                str(bool(s.valid[i])).lower(),
            ])
        return buf.getvalue()


def cv_evaluate(
    data: FeaturePair,
    plan: CvPlan,
    config: EstimatorConfig | None = None,
    standardize: bool = True,
    warm_path: bool = True,
) -> CvCurve:
    """Fit on k-1 folds, score on the held-out fold, for every lambda in the grid.

    With ``warm_path`` each split walks the grid from the largest lambda
    down, starting every fit from the previous solution. The penalized
    problem is convex, so this changes the path taken, not the optimum
    (up to ``outer_tol``). Cells are processed and stored in a fixed order;
    the result is a deterministic function of the inputs.
    """
    config = config or EstimatorConfig()
    grid = plan.lambda_grid
    labels = make_folds(data.n, plan)
    shape = (len(grid), plan.repeats, plan.k)
    nll = np.full(shape, np.nan)
    mismatch = np.full(shape, np.nan)
    ranks = np.full(shape, -1, dtype=np.int64)

    for r in range(plan.repeats):
        for f in range(plan.k):
            test_idx = np.flatnonzero(labels[r] == f)
            train_idx = np.flatnonzero(labels[r] != f)
            train, test = split_pairs(data, train_idx, test_idx, standardize)
            init, warm = None, None
            for li in reversed(range(len(grid))):
                cfg = config.replace(lam=grid[li])
                try:
                    res = fit(train, cfg, init=init, warm=warm)
                except IPFPConvergenceError as exc:
                    logger.warning("cv cell lambda=%g repeat=%d fold=%d failed: %s", grid[li], r, f, exc)
                    init, warm = None, None
                    continue
                if warm_path:
                    init, warm = res.A_hat, res.potentials
                if not res.converged:
                    logger.warning("cv cell lambda=%g repeat=%d fold=%d: %s", grid[li], r, f, res.status)
                    continue
                try:
                    nll[li, r, f], mismatch[li, r, f] = heldout_errors(res.A_hat, test, config)
                except IPFPConvergenceError as exc:
                    logger.warning("cv held-out solve failed at lambda=%g: %s", grid[li], exc)
                    continue
                ranks[li, r, f] = res.rank
            logger.info("cv repeat %d fold %d done", r, f)

    n_exp = plan.repeats * plan.k
    summary = CvSummary.from_raw(grid, nll.reshape(len(grid), n_exp), mismatch.reshape(len(grid), n_exp))
    return CvCurve(plan, nll, mismatch, ranks, summary)


@dataclass
class Selection:
    lam: float
    lam_min_nll: float
    lam_min_mismatch: float
    criteria_disagree: bool
    rule: str = "largest lambda within one standard error of the minimum mean held-out nll"

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "lambda_min_nll": self.lam_min_nll,
            "lambda_min_mismatch": self.lam_min_mismatch,
            "criteria_disagree": self.criteria_disagree,
            "rule": self.rule,
        }


def select_lambda(curve: CvCurve | CvSummary) -> Selection:
    """Pick lambda by the one-standard-error rule on held-out nll.

    Among valid lambdas whose mean nll is within one standard error (of the
    minimizer) of the minimum, the largest, i.e. lowest-rank, model wins.
    The mismatch minimizer is reported alongside.
    """
    s = curve.summary if isinstance(curve, CvCurve) else curve
    ok = np.asarray(s.valid, dtype=bool) & np.isfinite(s.mean_nll)
    if not ok.any():
        raise ValueError("cross-validation curve has no valid lambda")
    idx = np.flatnonzero(ok)
    best = idx[np.argmin(s.mean_nll[idx])]
    se = s.se_nll[best] if np.isfinite(s.se_nll[best]) else 0.0
    within = idx[s.mean_nll[idx] <= s.mean_nll[best] + se]
    chosen = within.max()
    mm_ok = idx[np.isfinite(s.mean_mismatch[idx])]
    best_mm = mm_ok[np.argmin(s.mean_mismatch[mm_ok])] if mm_ok.size else best
    return Selection(
        lam=float(s.lambdas[chosen]),
        lam_min_nll=float(s.lambdas[best]),
        lam_min_mismatch=float(s.lambdas[best_mm]),
        criteria_disagree=bool(best != best_mm),
    )
