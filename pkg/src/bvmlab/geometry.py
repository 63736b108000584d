"""Local geometry of the quasi-likelihood around the best parametric fit.

Central objects:

* ``theta_star``: maximizer of the expected log-likelihood,
* ``d0_sq``: total Fisher matrix, the negative expected Hessian at
  theta_star, which sets the local metric ||D0 (theta - theta_star)||,
* ``v0_sq``: covariance of the score at theta_star (differs from d0_sq
  under misspecification),
* ``a_sq``: smallest constant with a_sq * d0_sq >= v0_sq,
* the standardized score ``xi = D0^{-1} grad L(theta_star)`` and the
  Gaussian-approximation center ``theta_circ = theta_star + D0^{-2} grad L``,
* the bracketing pair of quadratic surrogates with matrices
  (1 -+ rd) d0_sq that sandwich the log-likelihood ratio locally.

All matrix solves go through a symmetric positive-definite factorization;
failure raises rather than regularizing, because silently inflating d0_sq
would corrupt every downstream discrepancy metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import SpdFactorizationError, UnsupportedCapability
from .models import DatasetHandle, QuasiModel, TrueProcess

GRAD_TOL = 1e-10
MAX_NEWTON_ITER = 200
ARMIJO_C = 1e-4


# ---------------------------------------------------------------------------
# SPD linear algebra helpers
# ---------------------------------------------------------------------------

def spd_cholesky(mat: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        eigs = np.linalg.eigvalsh((mat + mat.T) / 2.0)
        raise SpdFactorizationError(
            f"matrix is not positive definite; eigenvalue range "
            f"[{eigs.min():.3e}, {eigs.max():.3e}]"
        ) from exc


def spd_solve(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    chol = spd_cholesky(mat)
    y = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, y)


def spd_root(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root and inverse root of an SPD matrix."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() <= 0.0:
        raise SpdFactorizationError(
            f"matrix is not positive definite; smallest eigenvalue {vals.min():.3e}"
        )
    root = (vecs * np.sqrt(vals)) @ vecs.T
    inv_root = (vecs / np.sqrt(vals)) @ vecs.T
    return (root + root.T) / 2.0, (inv_root + inv_root.T) / 2.0


def sym_opnorm(mat: np.ndarray, tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Largest absolute eigenvalue of a symmetric matrix.

    Dense eigensolver up to p = 64, power iteration beyond.
    """
    sym = (mat + mat.T) / 2.0
    p = sym.shape[0]
    if p <= 64:
        return float(np.max(np.abs(np.linalg.eigvalsh(sym))))
    return _power_largest_abs(sym, tol, max_iter)


def _power_largest_abs(sym: np.ndarray, tol: float, max_iter: int) -> float:
    p = sym.shape[0]
    v = np.full(p, 1.0 / math.sqrt(p))
    v += 1e-6 * np.sin(np.arange(1, p + 1))  # break unlucky orthogonality
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = sym @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam_new = float(v @ sym @ v)
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return abs(lam_new)
        lam = lam_new
    return abs(lam)


def identifiability_bound(d0_sq: np.ndarray, v0_sq: np.ndarray) -> float:
    """Smallest a_sq with a_sq * d0_sq >= v0_sq in the Loewner order.

    Equals the largest eigenvalue of D0^{-1} V0^2 D0^{-1}; computed by
    power iteration and cross-checked against a dense eigendecomposition
    for p <= 64.
    """
    _, d0_inv = spd_root(d0_sq)
    m = d0_inv @ v0_sq @ d0_inv
    m = (m + m.T) / 2.0
    lam = _power_largest_abs(m, tol=1e-12, max_iter=10_000)
    if m.shape[0] <= 64:
        dense = float(np.max(np.linalg.eigvalsh(m)))
        if abs(dense - lam) > 1e-6 * max(1.0, dense):
            raise SpdFactorizationError(
                f"power iteration ({lam:.12e}) disagrees with dense "
                f"eigendecomposition ({dense:.12e})"
            )
        return dense
    return lam


# ---------------------------------------------------------------------------
# Geometry containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalGeometry:
    """Deterministic local-geometry summary of a (model, true process) pair."""

    theta_star: np.ndarray
    d0_sq: np.ndarray
    v0_sq: np.ndarray
    a_sq: float
    r0: float
    x_n: float
    q_star: float
    d0: np.ndarray
    d0_inv: np.ndarray
    r0_normalization: float
    boundary_fit: bool = False

    @property
    def p(self) -> int:
        return self.theta_star.shape[0]

    def metric_norm(self, dtheta: np.ndarray) -> float:
        return math.sqrt(max(0.0, float(dtheta @ self.d0_sq @ dtheta)))

    def in_locality(self, theta: np.ndarray, radius: Optional[float] = None) -> bool:
        r = self.r0 if radius is None else radius
        return self.metric_norm(np.asarray(theta, dtype=float) - self.theta_star) <= r

    def theta_at(self, direction: np.ndarray, radius: float) -> np.ndarray:
        """Point at metric distance ``radius`` from theta_star along a unit direction."""
        return self.theta_star + radius * (self.d0_inv @ direction)


@dataclass(frozen=True)
class ScoreState:
    """Per-dataset standardized score and Gaussian-approximation center."""

    xi: np.ndarray
    theta_circ: np.ndarray
    q: float
    grad: np.ndarray

    @property
    def xi_norm_sq(self) -> float:
        return float(self.xi @ self.xi)


@dataclass(frozen=True)
class BracketPair:
    """Quadratic bracketing surrogates with matrices (1 -+ rd) d0_sq.

    The upper surrogate (matrix (1 - rd) d0_sq) dominates the
    log-likelihood ratio locally; the lower one (matrix (1 + rd) d0_sq)
    undershoots it.
    """

    rd: float
    d_ub_sq: np.ndarray
    d_lb_sq: np.ndarray
    xi_ub: np.ndarray
    xi_lb: np.ndarray
    theta_ub: np.ndarray
    theta_lb: np.ndarray
    delta_rd_vec: np.ndarray
    grad: np.ndarray  # score at theta_star; shared linear term of both surrogates

    @property
    def p(self) -> int:
        return self.xi_ub.shape[0]


@dataclass(frozen=True)
class MleResult:
    theta_hat: np.ndarray
    converged: bool
    grad_norm: float
    iterations: int
    on_boundary: bool = False


# ---------------------------------------------------------------------------
# Newton solver with Armijo backtracking
# ---------------------------------------------------------------------------

def _newton_maximize(value: Callable[[np.ndarray], float],
                     grad: Callable[[np.ndarray], np.ndarray],
                     hess: Callable[[np.ndarray], np.ndarray],
                     x0: np.ndarray,
                     box: np.ndarray,
                     grad_tol: float = GRAD_TOL,
                     max_iter: int = MAX_NEWTON_ITER) -> MleResult:
    x = np.asarray(x0, dtype=float).copy()
    low, high = box[:, 0], box[:, 1]
    f = value(x)
    g = grad(x)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol * (1.0 + abs(f)):
            break
        h = hess(x)
        try:
            step = spd_solve(-h, g)
        except SpdFactorizationError:
            step = g / max(gnorm, 1.0)
        t = 1.0
        accepted = False
        slope = float(g @ step)
        if slope <= 0.0:  # not an ascent direction; fall back to gradient
            step = g / max(gnorm, 1.0)
            slope = float(g @ step)
        for _ in range(60):
            cand = np.clip(x + t * step, low, high)
            f_cand = value(cand)
            if f_cand >= f + ARMIJO_C * t * slope:
                x, f = cand, f_cand
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        g = grad(x)
    gnorm = float(np.linalg.norm(g))
    width = high - low
    on_boundary = bool(np.any((x - low) < 1e-9 * width) or np.any((high - x) < 1e-9 * width))
    converged = gnorm <= grad_tol * (1.0 + abs(f)) and not on_boundary
    return MleResult(theta_hat=x, converged=converged, grad_norm=gnorm,
                     iterations=iterations, on_boundary=on_boundary)


def solve_theta_star(model: QuasiModel, process: TrueProcess,
                     init: Optional[np.ndarray] = None) -> MleResult:
    """Maximize the expected log-likelihood over the domain box."""
    x0 = np.zeros(model.p) if init is None else model.check_theta(init)
    return _newton_maximize(
        lambda th: model.expected_loglik(process, th),
        lambda th: model.expected_score(process, th),
        lambda th: model.expected_hessian(process, th),
        x0, model.domain_box,
    )


def solve_mle(model: QuasiModel, data: DatasetHandle,
              init: Optional[np.ndarray] = None) -> MleResult:
    """Maximize the observed quasi log-likelihood; never fabricates a point."""
    x0 = np.zeros(model.p) if init is None else model.check_theta(init)
    return _newton_maximize(
        lambda th: model.log_lik(data, th),
        lambda th: model.score(data, th),
        lambda th: model.observed_hessian(data, th),
        x0, model.domain_box,
    )


# ---------------------------------------------------------------------------
# Geometry assembly
# ---------------------------------------------------------------------------

def info_matrices(model: QuasiModel, process: TrueProcess,
                  theta_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total Fisher matrix and score covariance at theta_star.

    Raises if the Fisher matrix is not positive definite (with the
    eigenvalue range in the message) rather than regularizing.
    """
    d0_sq = -model.expected_hessian(process, theta_star)
    d0_sq = (d0_sq + d0_sq.T) / 2.0
    eigs = np.linalg.eigvalsh(d0_sq)
    if eigs.min() <= 0.0:
        raise SpdFactorizationError(
            f"total Fisher matrix not positive definite; eigenvalue range "
            f"[{eigs.min():.3e}, {eigs.max():.3e}]"
        )
    v0_sq = model.score_cov(process, theta_star)
    return d0_sq, (v0_sq + v0_sq.T) / 2.0


def local_geometry(model: QuasiModel, process: TrueProcess, *,
                   r0_normalization: float = 4.0,
                   x_n: Optional[float] = None,
                   r0_override: Optional[float] = None,
                   theta_star: Optional[np.ndarray] = None) -> LocalGeometry:
    """Assemble the full deterministic geometry for a model/process pair.

    The locality radius defaults to
    ``r0^2 = r0_normalization * (1 + a_sq) * (p + x_n)`` with ``x_n = p``,
    both overridable.
    """
    if theta_star is None:
        fit = solve_theta_star(model, process)
        if not fit.converged and not fit.on_boundary:
            raise UnsupportedCapability(
                f"expected log-likelihood maximization did not converge "
                f"(grad norm {fit.grad_norm:.3e} after {fit.iterations} iterations)"
            )
        theta_star = fit.theta_hat
        boundary = fit.on_boundary
    else:
        theta_star = model.check_theta(theta_star)
        boundary = False
    d0_sq, v0_sq = info_matrices(model, process, theta_star)
    a_sq = identifiability_bound(d0_sq, v0_sq)
    xn = float(model.p) if x_n is None else float(x_n)
    if r0_override is not None:
        r0 = float(r0_override)
    else:
        r0 = math.sqrt(r0_normalization * (1.0 + a_sq) * (model.p + xn))
    d0, d0_inv = spd_root(d0_sq)
    q_star = model.p + float(np.trace(spd_solve(d0_sq, v0_sq)))
    return LocalGeometry(theta_star=theta_star, d0_sq=d0_sq, v0_sq=v0_sq,
                         a_sq=a_sq, r0=r0, x_n=xn, q_star=q_star,
                         d0=d0, d0_inv=d0_inv,
                         r0_normalization=r0_normalization,
                         boundary_fit=boundary)


def geometry_from_matrices(theta_star, d0_sq, v0_sq, *,
                           r0_normalization: float = 4.0,
                           x_n: Optional[float] = None,
                           r0_override: Optional[float] = None) -> LocalGeometry:
    """Build a geometry from explicitly supplied matrices (tests, audits)."""
    theta_star = np.asarray(theta_star, dtype=float).ravel()
    d0_sq = np.asarray(d0_sq, dtype=float)
    v0_sq = np.asarray(v0_sq, dtype=float)
    p = theta_star.shape[0]
    a_sq = identifiability_bound(d0_sq, v0_sq)
    xn = float(p) if x_n is None else float(x_n)
    r0 = float(r0_override) if r0_override is not None else math.sqrt(
        r0_normalization * (1.0 + a_sq) * (p + xn))
    d0, d0_inv = spd_root(d0_sq)
    q_star = p + float(np.trace(spd_solve(d0_sq, v0_sq)))
    return LocalGeometry(theta_star=theta_star, d0_sq=d0_sq, v0_sq=v0_sq,
                         a_sq=a_sq, r0=r0, x_n=xn, q_star=q_star,
                         d0=d0, d0_inv=d0_inv,
                         r0_normalization=r0_normalization)


def score_state(model: QuasiModel, data: DatasetHandle,
                geom: LocalGeometry) -> ScoreState:
    """Standardized score xi, center theta_circ, effective dimension q."""
    grad = model.score(data, geom.theta_star)
    xi = geom.d0_inv @ grad
    theta_circ = geom.theta_star + spd_solve(geom.d0_sq, grad)
    q = geom.p + float(xi @ xi)
    return ScoreState(xi=xi, theta_circ=theta_circ, q=q, grad=grad)


def bracket_pair(geom: LocalGeometry, state: ScoreState, rd: float) -> BracketPair:
    """Bracketing surrogates at contraction constant rd in [0, 1)."""
    if not 0.0 <= rd < 1.0:
        raise ValueError("rd must lie in [0, 1)")
    base_step = spd_solve(geom.d0_sq, state.grad)  # theta_circ - theta_star
    xi_ub = state.xi / math.sqrt(1.0 - rd)
    xi_lb = state.xi / math.sqrt(1.0 + rd)
    theta_ub = geom.theta_star + base_step / (1.0 - rd)
    theta_lb = geom.theta_star + base_step / (1.0 + rd)
    delta_vec = geom.d0 @ (state.theta_circ - theta_ub)
    return BracketPair(rd=float(rd),
                       d_ub_sq=(1.0 - rd) * geom.d0_sq,
                       d_lb_sq=(1.0 + rd) * geom.d0_sq,
                       xi_ub=xi_ub, xi_lb=xi_lb,
                       theta_ub=theta_ub, theta_lb=theta_lb,
                       delta_rd_vec=delta_vec, grad=state.grad.copy())


def bracket_quadratic(pair: BracketPair, side: str, theta, theta_star) -> float:
    """Value of the upper or lower quadratic surrogate at theta.

    ``Lam(theta) = xi_side' D_side (theta - theta_star)
                   - ||D_side (theta - theta_star)||^2 / 2``;
    the linear term equals grad L(theta_star)' (theta - theta_star) on both
    sides and is evaluated from the stored score.
    """
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    dtheta = np.asarray(theta, dtype=float) - np.asarray(theta_star, dtype=float)
    d_sq = pair.d_ub_sq if side == "upper" else pair.d_lb_sq
    return float(pair.grad @ dtheta) - 0.5 * float(dtheta @ d_sq @ dtheta)


def mle_expansion_gap(geom: LocalGeometry, state: ScoreState, pair: BracketPair,
                      mle: MleResult) -> float:
    """||D_ub (theta_hat - theta_star) - xi_ub||^2, to compare against 2 Delta."""
    dtheta = mle.theta_hat - geom.theta_star
    vec = math.sqrt(1.0 - pair.rd) * (geom.d0 @ dtheta) - pair.xi_ub
    return float(vec @ vec)
