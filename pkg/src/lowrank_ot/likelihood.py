"""Per-sample negative log-likelihood of an observed matching and its gradient.

For matched pairs ``(x_k, y_k)``, ``k = 1..N``, and affinity ``A`` the
objective is::

    nll(A) = W(A) - (1/N) sum_k x_k^T A y_k

where ``W`` is the entropic welfare on the uniform empirical marginals. It is
convex in ``A`` with gradient ``E_{pi^A}[X Y^T] - E_obs[X Y^T]``. The
observed coupling is diagonal and never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ot_core import (
    Coupling,
    DiscreteMarginal,
    IPFPSettings,
    IPFPSolution,
    Potentials,
    build_surplus,
    solve,
    welfare,
)


@dataclass(frozen=True)
class FeaturePair:
    """Side-1 features ``X`` (N x d) and matched side-2 features ``Y`` (N x d').

    Row ``k`` of ``X`` is matched with row ``k`` of ``Y``. Constant columns
    are rejected unless ``allow_constant`` is set (cross-validation splits can
    legitimately lose all variation in a rare indicator).
    """

    X: np.ndarray
    Y: np.ndarray
    allow_constant: bool = False

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        Y = np.ascontiguousarray(self.Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("X and Y must be 2-d arrays")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}; rows must be matched pairs")
        if X.shape[0] < 2:
            raise ValueError("need at least two matched pairs")
        if X.shape[1] < 1 or Y.shape[1] < 1:
            raise ValueError("each side needs at least one feature")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("features must be finite")
        if not self.allow_constant:
            for name, M in (("X", X), ("Y", Y)):
                const = np.flatnonzero(np.ptp(M, axis=0) == 0)
                if const.size:
                    raise ValueError(f"{name} has constant column(s) {const.tolist()}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.X.shape[1], self.Y.shape[1]

    def subset(self, idx) -> FeaturePair:
        return FeaturePair(self.X[idx], self.Y[idx], allow_constant=True)


def observed_cross_cov(data: FeaturePair) -> np.ndarray:
    """``(1/N) sum_k x_k y_k^T``."""
    return data.X.T @ data.Y / data.n


def model_cross_cov(data: FeaturePair, pi) -> np.ndarray:
    """``sum_ij pi_ij x_i y_j^T`` for a coupling (or raw N x N mass array)."""
    mass = pi.mass if isinstance(pi, Coupling) else np.asarray(pi, dtype=float)
    if mass.shape != (data.n, data.n):
        raise ValueError(f"coupling shape {mass.shape} does not match N = {data.n}")
    return data.X.T @ (mass @ data.Y)


def _check_affinity(A, data: FeaturePair) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape != data.dims:
        raise ValueError(f"affinity shape {A.shape} does not match feature dims {data.dims}")
    if not np.all(np.isfinite(A)):
        raise ValueError("affinity matrix has non-finite entries")
    return A


@dataclass
class Evaluation:
    """Objective value, gradient and the IPFP state they came from."""

    value: float
    gradient: np.ndarray
    solution: IPFPSolution

    @property
    def potentials(self) -> Potentials:
        return self.solution.potentials


class LikelihoodSession:
    """Evaluates ``nll`` and its gradient, warm-starting IPFP from the last call.

    One session belongs to one estimation run; it is not meant to be shared
    between threads.
    """

    def __init__(self, data: FeaturePair, settings: IPFPSettings | None = None):
        self.data = data
        self.settings = settings or IPFPSettings()
        self.marginal = DiscreteMarginal.uniform(data.n)
        self.observed = observed_cross_cov(data)
        self.warm: Potentials | None = None
        self.ipfp_iterations = 0

    def evaluate(self, A, warm: Potentials | None = None) -> Evaluation:
        A = _check_affinity(A, self.data)
        phi = build_surplus(self.data.X, self.data.Y, A)
        sol = solve(
            phi,
            self.marginal,
            self.marginal,
            tol=self.settings.tol,
            max_iter=self.settings.max_iter,
            init=warm if warm is not None else self.warm,
        )
        self.ipfp_iterations += sol.potentials.iterations
        self.warm = sol.potentials
        value = welfare(sol.potentials, phi, self.marginal, self.marginal) - float(np.sum(A * self.observed))
        gradient = sol.cross_moment(self.data.X, self.data.Y) - self.observed
        return Evaluation(value, gradient, sol)


def neg_log_likelihood(A, data: FeaturePair, settings: IPFPSettings | None = None) -> float:
    """``W(A) - (1/N) sum_k x_k^T A y_k`` (per-sample, minimization sign)."""
    return LikelihoodSession(data, settings).evaluate(A).value


def likelihood_gradient(A, data: FeaturePair, settings: IPFPSettings | None = None) -> np.ndarray:
    """Gradient of :func:`neg_log_likelihood`: model minus observed cross-moments."""
    return LikelihoodSession(data, settings).evaluate(A).gradient
