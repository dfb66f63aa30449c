"""Entropic optimal transport on discrete marginals.

The coupling at affinity ``Phi`` and temperature ``sigma`` has the log-linear
form ``pi_ij = exp(alpha_i + beta_j + Phi_ij / sigma)``; :func:`ipfp` finds
the potentials ``(alpha, beta)`` that make its marginals match.

Solver outline
--------------
Potentials are kept in log scale. A cold start does one exact log-domain
sweep (compiled log-sum-exp kernels), after which the potentials are
absorbed into a max-shifted Gibbs kernel ``G = exp(K + alpha + beta - c)``
with entries in (0, 1]. Proportional fitting then runs on level-scale
scalings ``u, v`` (two BLAS mat-vecs per iteration) until the marginal
violation drops below ``tol``. Whenever a scaling leaves
``[exp(-ABSORB_LOG), exp(ABSORB_LOG)]`` or a row/column sum underflows, the
scalings are absorbed back into the potentials and a log-domain sweep
restarts the stage, so no intermediate can overflow.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._backend import kernels

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
ABSORB_LOG = 200.0
_TINY = 1e-280


@dataclass(frozen=True)
class IPFPSettings:
    """Inner-solver tolerances shared by every likelihood evaluation."""

    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("IPFP tol must be positive")
        if self.max_iter < 1:
            raise ValueError("IPFP max_iter must be at least 1")


class IPFPConvergenceError(RuntimeError):
    """IPFP hit ``max_iter`` before the marginal violation reached ``tol``."""

    def __init__(self, iterations: int, residual: float, tol: float):
        self.iterations = iterations
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"IPFP did not converge after {iterations} iterations "
            f"(marginal residual {residual:.3e} > tol {tol:.1e})"
        )


@dataclass(frozen=True)
class DiscreteMarginal:
    """Probability weights on ``n`` support points."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("marginal weights must be a nonempty vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("marginal weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"marginal weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n: int) -> DiscreteMarginal:
        if n < 1:
            raise ValueError("need at least one support point")
        return cls(np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class SurplusMatrix:
    """Joint surplus ``Phi(x_i, y_j)`` on the product support, with temperature."""

    values: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("surplus values must be a 2-d array")
        if not np.all(np.isfinite(v)):
            raise ValueError("surplus values must be finite")
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError("temperature must be a positive real")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def kernel(self) -> np.ndarray:
        """Log-kernel ``Phi / sigma`` as a C-contiguous array."""
        if self.temperature == 1.0:
            return self.values
        return np.ascontiguousarray(self.values / self.temperature)


@dataclass
class Potentials:
    """Log-scale fitting vectors; ``mean(beta) == 0`` after :func:`ipfp`."""

    alpha: np.ndarray
    beta: np.ndarray
    iterations: int = 0
    residual: float = float("nan")

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.alpha.ndim != 1 or self.beta.ndim != 1:
            raise ValueError("potentials must be vectors")
        if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.beta))):
            raise ValueError("potentials must be finite")

    def shifted(self, c: float) -> Potentials:
        """Gauge move: ``alpha + c``, ``beta - c`` (same coupling)."""
        return Potentials(self.alpha + c, self.beta - c, self.iterations, self.residual)


@dataclass
class Coupling:
    """Dense transport plan. ``marginal_residual`` is None when no marginals were given."""

    mass: np.ndarray
    marginal_residual: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.mass.shape


def build_surplus(X, Y, A, sigma: float = 1.0) -> SurplusMatrix:
    """Bilinear surplus ``values[i, j] = X[i] @ A @ Y[j]``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    A = np.asarray(A, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or A.ndim != 2:
        raise ValueError("X, Y and A must be 2-d arrays")
    if X.shape[1] != A.shape[0] or Y.shape[1] != A.shape[1]:
        raise ValueError(
            f"shape mismatch: X is {X.shape}, Y is {Y.shape}, A is {A.shape}; "
            "need X.shape[1] == A.shape[0] and Y.shape[1] == A.shape[1]"
        )
    if not np.all(np.isfinite(A)):
        raise ValueError("affinity matrix has non-finite entries")
    # (X A) Y^T costs N*d*d' + N*M*d'; the M*N product dominates either way
    return SurplusMatrix(np.ascontiguousarray((X @ A) @ Y.T), sigma)


def _check_marginals(shape, mu1: DiscreteMarginal, mu2: DiscreteMarginal):
    if shape != (len(mu1), len(mu2)):
        raise ValueError(
            f"surplus shape {shape} does not match marginal lengths ({len(mu1)}, {len(mu2)})"
        )


def marginal_residual(mass: np.ndarray, mu1: DiscreteMarginal, mu2: DiscreteMarginal) -> float:
    """Max absolute deviation of row and column sums from ``mu1``, ``mu2``."""
    return float(
        max(
            np.max(np.abs(mass.sum(axis=1) - mu1.weights)),
            np.max(np.abs(mass.sum(axis=0) - mu2.weights)),
        )
    )


@dataclass
class IPFPSolution:
    """Converged state: coupling ``pi = u[:, None] * gibbs * v[None, :]``.

    Keeps the absorbed kernel so that coupling-weighted moments cost two
    matrix products instead of another exponential sweep.
    """

    potentials: Potentials
    gibbs: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def mass(self) -> np.ndarray:
        return self.u[:, None] * self.gibbs * self.v[None, :]

    def cross_moment(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """``sum_ij pi_ij X[i] Y[j]^T``."""
        return (X * self.u[:, None]).T @ (self.gibbs @ (Y * self.v[:, None]))


def _log_sweep(K, log_mu1, log_mu2, alpha, beta, work1, work2):
    kernels.lse_rows(K, beta, work1)
    np.subtract(log_mu1, work1, out=alpha)
    kernels.lse_cols(K, alpha, work2)
    np.subtract(log_mu2, work2, out=beta)


def solve(
    phi: SurplusMatrix,
    mu1: DiscreteMarginal,
    mu2: DiscreteMarginal,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    init: Potentials | None = None,
) -> IPFPSolution:
    """Run IPFP and keep the absorbed kernel; see :func:`ipfp`."""
    _check_marginals(phi.shape, mu1, mu2)
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    w1, w2 = mu1.weights, mu2.weights
    if np.any(w1 <= 0) or np.any(w2 <= 0):
        raise ValueError("IPFP needs strictly positive marginal weights; drop zero-weight points")

    K = phi.kernel()
    n1, n2 = K.shape
    log_mu1, log_mu2 = np.log(w1), np.log(w2)
    work1, work2 = np.empty(n1), np.empty(n2)
    G = np.empty((n1, n2))

    iters = 0
    if init is None:
        alpha, beta = np.zeros(n1), np.zeros(n2)
        need_sweep = True
    else:
        if init.alpha.shape != (n1,) or init.beta.shape != (n2,):
            raise ValueError("warm-start potentials do not match the surplus shape")
        alpha, beta = init.alpha.copy(), init.beta.copy()
        need_sweep = False

    residual = np.inf
    while True:
        if need_sweep:
            _log_sweep(K, log_mu1, log_mu2, alpha, beta, work1, work2)
            iters += 1
        alpha -= kernels.gibbs(K, alpha, beta, G)
        u, v = np.ones(n1), np.ones(n2)
        err_c = np.inf
        need_sweep = False
        while True:
            s = G @ v
            residual = max(float(np.max(np.abs(u * s - w1))), err_c)
            if residual <= tol:
                break
            if iters >= max_iter:
                raise IPFPConvergenceError(iters, residual, tol)
            if not np.all(s > _TINY):
                need_sweep = True
                break
            u = w1 / s
            t = G.T @ u
            if not np.all(t > _TINY):
                need_sweep = True
                break
            v = w2 / t
            iters += 1
            err_c = float(np.max(np.abs(v * t - w2)))
            if max(np.max(np.abs(np.log(u))), np.max(np.abs(np.log(v)))) > ABSORB_LOG:
                break
        alpha += np.log(u)
        beta += np.log(v)
        if residual <= tol:
            break
        logger.debug("IPFP absorbing scalings at iteration %d (sweep=%s)", iters, need_sweep)

    c = float(beta.mean())
    alpha += c
    beta -= c
    # u, v stay paired with G's original gauge; mass() is unaffected by the shift
    return IPFPSolution(Potentials(alpha, beta, iters, residual), G, u, v)


def ipfp(
    phi: SurplusMatrix,
    mu1: DiscreteMarginal,
    mu2: DiscreteMarginal,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    init: Potentials | None = None,
) -> Potentials:
    """Iterated proportional fitting for the entropic coupling.

    Parameters
    ----------
    phi : SurplusMatrix
        Surplus and temperature.
    mu1, mu2 : DiscreteMarginal
        Row and column marginals; all weights must be strictly positive.
    tol : float
        Stop when the implied coupling's max absolute marginal violation is
        at most ``tol``.
    max_iter : int
        Iteration budget (log-domain sweeps and level iterations both count).
    init : Potentials, optional
        Warm start, typically the potentials of a nearby surplus.

    Returns
    -------
    Potentials
        Gauge-fixed so that ``mean(beta) == 0``; ``iterations`` and
        ``residual`` record the run.

    Raises
    ------
    IPFPConvergenceError
        If ``max_iter`` is exhausted.
    """
    return solve(phi, mu1, mu2, tol, max_iter, init).potentials


def coupling_from(
    pot: Potentials,
    phi: SurplusMatrix,
    mu1: DiscreteMarginal | None = None,
    mu2: DiscreteMarginal | None = None,
) -> Coupling:
    """Materialize ``pi_ij = exp(alpha_i + beta_j + Phi_ij / sigma)``."""
    n1, n2 = phi.shape
    if pot.alpha.shape != (n1,) or pot.beta.shape != (n2,):
        raise ValueError(
            f"potentials of lengths ({pot.alpha.size}, {pot.beta.size}) "
            f"do not match surplus shape {phi.shape}"
        )
    mass = np.exp(phi.kernel() + pot.alpha[:, None] + pot.beta[None, :])
    res = None
    if mu1 is not None and mu2 is not None:
        _check_marginals(phi.shape, mu1, mu2)
        res = marginal_residual(mass, mu1, mu2)
    return Coupling(mass, res)


def welfare(pot: Potentials, phi: SurplusMatrix, mu1: DiscreteMarginal, mu2: DiscreteMarginal) -> float:
    """Regularized welfare ``W = -<mu1, alpha> - <mu2, beta>`` at temperature 1.

    Valid only at the IPFP fixed point. :func:`welfare_direct` evaluates the
    same quantity from the coupling itself.
    """
    if phi.temperature != 1.0:
        raise ValueError("welfare is defined at the normalized temperature sigma = 1")
    _check_marginals(phi.shape, mu1, mu2)
    return float(-(mu1.weights @ pot.alpha) - (mu2.weights @ pot.beta))


def welfare_direct(coupling: Coupling, phi: SurplusMatrix) -> float:
    """``E_pi[Phi - ln pi]`` evaluated entrywise (zero-mass cells contribute 0)."""
    if phi.temperature != 1.0:
        raise ValueError("welfare is defined at the normalized temperature sigma = 1")
    m = coupling.mass
    pos = m > 0
    return float(np.sum(m[pos] * (phi.values[pos] - np.log(m[pos]))))
