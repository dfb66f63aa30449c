"""Nuclear-norm penalized maximum likelihood for the affinity matrix.

Minimizes ``nll(A) + lam * ||A||_*`` by proximal gradient descent with
singular-value soft-thresholding and backtracking. ``lam = 0`` is plain
maximum likelihood, whose stationarity condition is moment matching of the
cross-moments ``E[X Y^T]``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.linalg import subspace_angles

from .likelihood import Evaluation, FeaturePair, LikelihoodSession
from .ot_core import DEFAULT_MAX_ITER, DEFAULT_TOL, IPFPSettings, Potentials

logger = logging.getLogger(__name__)

RANK_EPSILON = 1e-10
ALIGN_TOL = 1e-3


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings for :func:`fit`.

    ``lam`` is the nuclear-norm weight; config files spell it ``lambda``.
    ``seed`` is not consumed by the (deterministic) solver but is carried
    into run manifests.
    """

    lam: float = 0.0
    step_init: float = 1.0
    backtrack_factor: float = 0.5
    max_outer_iter: int = 5000
    outer_tol: float = 1e-6
    ipfp_tol: float = DEFAULT_TOL
    ipfp_max_iter: int = DEFAULT_MAX_ITER
    seed: int = 0
    max_backtracks: int = 60

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be a nonnegative real")
        if not self.step_init > 0:
            raise ValueError("step_init must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.max_outer_iter < 1 or self.max_backtracks < 1:
            raise ValueError("iteration limits must be positive")
        if not (self.outer_tol > 0 and self.ipfp_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.ipfp_max_iter < 1:
            raise ValueError("ipfp_max_iter must be positive")

    @property
    def ipfp(self) -> IPFPSettings:
        return IPFPSettings(self.ipfp_tol, self.ipfp_max_iter)

    @property
    def kkt_tol(self) -> float:
        return 10.0 * self.outer_tol

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EstimatorConfig:
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown estimator config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> EstimatorConfig:
        d = asdict(self)
        d.update(changes)
        return EstimatorConfig(**d)


@dataclass
class KktReport:
    """First-order optimality audit of a penalized fit.

    With ``M`` the cross-moment mismatch at ``A_hat``, the top ``rank(A_hat)``
    singular values of ``M`` must equal ``lam`` and the rest must not
    exceed it; ``aligned`` says the matching singular subspaces of ``M`` and
    ``A_hat`` coincide.
    """

    mismatch_singular_values: np.ndarray
    on_support_max_dev: float
    off_support_max: float
    aligned: bool
    max_angle: float = 0.0

    def passes(self, lam: float, tol: float) -> bool:
        return self.on_support_max_dev <= tol and self.off_support_max <= lam + tol

    def to_dict(self) -> dict:
        return {
            "mismatch_singular_values": [float(s) for s in self.mismatch_singular_values],
            "on_support_max_dev": float(self.on_support_max_dev),
            "off_support_max": float(self.off_support_max),
            "aligned": bool(self.aligned),
            "max_angle": float(self.max_angle),
        }


@dataclass
class EstimationResult:
    A_hat: np.ndarray
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    rank: int
    objective_trace: np.ndarray
    kkt: KktReport
    converged: bool
    iterations: int
    lam: float
    gradient_norm: float
    ipfp_iterations: int = 0
    status: str = ""
    potentials: Potentials | None = field(default=None, repr=False)

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


def nuclear_norm(A) -> float:
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def svd_soft_threshold(B, tau: float) -> np.ndarray:
    """Proximal operator of ``tau * ||.||_*``: shrink singular values by ``tau``."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise ValueError("expected a matrix")
    if not (np.isfinite(tau) and tau >= 0):
        raise ValueError("threshold must be a nonnegative real")
    if not np.all(np.isfinite(B)):
        raise np.linalg.LinAlgError("SVD of a matrix with non-finite entries")
    if tau == 0:
        return B.copy()
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    return (U * s) @ Vt


def signed_svd(A) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``A = U diag(S) V^T`` with a reproducible sign per component.

    Each left singular vector is flipped so its largest-magnitude entry is
    positive; the paired right vector flips with it.
    """
    U, S, Vt = np.linalg.svd(np.asarray(A, dtype=float), full_matrices=False)
    V = Vt.T
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, S, V * signs


def _rank(S, eps: float = RANK_EPSILON) -> int:
    return int(np.count_nonzero(S > eps))


def kkt_report(A_hat, mismatch, lam: float) -> KktReport:
    """Audit from a precomputed mismatch ``E_model[XY^T] - E_obs[XY^T]``."""
    U, S, V = signed_svd(A_hat)
    r = _rank(S)
    Um, sm, Vmt = np.linalg.svd(mismatch, full_matrices=False)
    on = sm[:r]
    off = sm[r:]
    on_dev = float(np.max(np.abs(on - lam))) if r else 0.0
    off_max = float(np.max(off)) if off.size else 0.0
    angle = 0.0
    if r:
        angle = max(
            float(np.max(subspace_angles(U[:, :r], Um[:, :r]))),
            float(np.max(subspace_angles(V[:, :r], Vmt[:r].T))),
        )
    return KktReport(sm, on_dev, off_max, angle < ALIGN_TOL, angle)


def kkt_audit(A_hat, data: FeaturePair, lam: float, settings: IPFPSettings | None = None) -> KktReport:
    """Check the first-order optimality conditions of the penalized problem at ``A_hat``."""
    if not lam > 0:
        raise ValueError("kkt_audit needs lambda > 0")
    ev = LikelihoodSession(data, settings).evaluate(A_hat)
    return kkt_report(A_hat, ev.gradient, lam)


def lambda_max(data: FeaturePair, settings: IPFPSettings | None = None) -> float:
    """Smallest penalty at which the zero matrix is optimal.

    This is the spectral norm of the likelihood gradient at ``A = 0``.
    """
    ev = LikelihoodSession(data, settings).evaluate(np.zeros(data.dims))
    return float(np.linalg.norm(ev.gradient, 2))


def fit(
    data: FeaturePair,
    config: EstimatorConfig | None = None,
    init=None,
    warm: Potentials | None = None,
) -> EstimationResult:
    """Estimate the affinity matrix.

    Parameters
    ----------
    data : FeaturePair
    config : EstimatorConfig
    init : array, optional
        Starting affinity; the zero matrix by default. Regularization paths
        pass the previous solution here.
    warm : Potentials, optional
        IPFP warm start matching ``init``.

    Returns
    -------
    EstimationResult
        ``converged`` is False when ``max_outer_iter`` ran out or the line
        search stalled at the numerical noise floor; the best iterate is
        returned either way.

    Raises
    ------
    IPFPConvergenceError
        If an inner solve fails; the outer loop cannot proceed without it.
    """
    config = config or EstimatorConfig()
    lam = config.lam
    session = LikelihoodSession(data, config.ipfp)
    A = np.zeros(data.dims) if init is None else np.array(init, dtype=float)
    if A.shape != data.dims:
        raise ValueError(f"init has shape {A.shape}, expected {data.dims}")

    ev = session.evaluate(A, warm=warm)
    F = ev.value + lam * nuclear_norm(A)
    trace = [F]
    converged = False
    status = "max_outer_iter reached"
    kkt = kkt_report(A, ev.gradient, lam)
    it = 0
    for it in range(1, config.max_outer_iter + 1):
        g = ev.gradient
        t = config.step_init
        for _ in range(config.max_backtracks):
            A_new = svd_soft_threshold(A - t * g, t * lam)
            D = A_new - A
            if not np.any(D):
                ev_new = ev
                break
            ev_new = session.evaluate(A_new, warm=ev.potentials)
            bound = ev.value + float(np.sum(g * D)) + float(np.sum(D * D)) / (2 * t)
            if ev_new.value <= bound + 1e-12 * max(1.0, abs(ev.value)):
                break
            t *= config.backtrack_factor
        else:
            status = "line search stalled"
            logger.warning("fit: line search stalled at iteration %d (lam=%g)", it, lam)
            break

        F_new = ev_new.value + lam * nuclear_norm(A_new)
        rel_step = float(np.linalg.norm(D)) / max(1.0, float(np.linalg.norm(A)))
        A, ev = A_new, ev_new
        trace.append(F_new)

        kkt = kkt_report(A, ev.gradient, lam)
        if lam == 0:
            done = float(np.linalg.norm(ev.gradient)) <= config.outer_tol
        else:
            done = rel_step <= config.outer_tol and kkt.passes(lam, config.kkt_tol)
        if done:
            converged = True
            status = "converged"
            break

    U, S, V = signed_svd(A)
    return EstimationResult(
        A_hat=A,
        U=U,
        S=S,
        V=V,
        rank=_rank(S),
        objective_trace=np.asarray(trace),
        kkt=kkt,
        converged=converged,
        iterations=it,
        lam=lam,
        gradient_norm=float(np.linalg.norm(ev.gradient)),
        ipfp_iterations=session.ipfp_iterations,
        status=status,
        potentials=ev.potentials,
    )
