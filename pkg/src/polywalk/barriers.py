"""State-dependent metrics built from the slack-scaled constraint rows.

Every metric here has the form ``M = sum_i w_i a_i a_i^T / s_i^2`` for a
weight vector ``w``:

* Dikin: ``w = 1`` (log-barrier Hessian),
* Vaidya: ``w = sigma + d/m`` with leverage scores ``sigma``,
* John: ``w = zeta``, the fixed point ``zeta = sigma(zeta) + d/(2m)``.

The private kernels accept arbitrary leading batch dimensions so the walk
engine can evaluate many chains at once. Public functions act on a single
point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FactorizationFailure, NoConvergence, NotInterior, SingularSystem
from .polytope import Polytope

KINDS = ("dikin", "vaidya", "john")

JOHN_TOL = 1e-10
JOHN_MAX_ITER = 500
JOHN_ETA = 1.0
BOUNDARY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class LocalMetric:
    kind: str
    x: np.ndarray
    M: np.ndarray
    chol: np.ndarray
    half_log_det: float
    weights: np.ndarray
    slack: np.ndarray

    def solve(self, v):
        """``M^{-1} v`` through the stored Cholesky factor."""
        y = np.linalg.solve(self.chol, v)
        return np.linalg.solve(self.chol.T, y)

    def norm_sq(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ self.M @ v)

    def theta(self, P: Polytope) -> np.ndarray:
        """Slack sensitivities ``a_i^T M^{-1} a_i / s_i^2``."""
        Q, _ = _factor(P.A / self.slack[:, None], self.weights)
        return _row_sq(Q) / self.weights


@dataclass(frozen=True)
class JohnWeights:
    zeta: np.ndarray
    residual: float
    iterations: int


def john_constants(m: int, d: int) -> tuple[float, float, float]:
    """Return ``(kappa, alpha, beta)`` for the John weight program."""
    kappa = np.log2(2.0 * m / d)
    alpha = 1.0 - 1.0 / kappa
    beta = d / (2.0 * m)
    return kappa, alpha, beta


# --- batched kernels ----------------------------------------------------------


def boundary_mask(P: Polytope, x, s=None) -> np.ndarray:
    """True where ``x`` is too close to some facet to build a metric."""
    x = np.asarray(x, dtype=float)
    ax = x @ P.A.T
    if s is None:
        s = P.b - ax
    tol = BOUNDARY_RTOL * (np.abs(P.b) + np.abs(ax))
    return np.any(s <= tol, axis=-1)


def scaled_rows(P: Polytope, x) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A_x, s)`` with rows ``a_i / s_i``; raise NotInterior near the boundary."""
    x = np.asarray(x, dtype=float)
    s = P.b - x @ P.A.T
    if np.any(boundary_mask(P, x, s)):
        raise NotInterior("point is not in the interior of the polytope")
    return P.A / s[..., :, None], s


def _gram(Ax: np.ndarray, w: np.ndarray) -> np.ndarray:
    M = np.einsum("...mi,...m,...mj->...ij", Ax, w, Ax)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _factor(Ax: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR of ``W^{1/2} A_x`` with ``diag(R) > 0``.

    ``R^T`` is the Cholesky factor of the metric and the squared row norms of
    Q are the weighted leverages; both stay accurate when the metric is badly
    conditioned, unlike routes through the Gram matrix.
    """
    B = Ax * np.sqrt(w)[..., None]
    Q, R = np.linalg.qr(B)
    diag = np.diagonal(R, axis1=-2, axis2=-1)
    if not np.all(np.isfinite(R)) or np.any(diag == 0):
        raise FactorizationFailure("metric is not positive definite")
    sign = np.sign(diag)
    return Q * sign[..., None, :], R * sign[..., :, None]


def _row_sq(Q: np.ndarray) -> np.ndarray:
    return np.sum(Q * Q, axis=-1)


def _half_log_det_r(R: np.ndarray) -> np.ndarray:
    return np.sum(np.log(np.diagonal(R, axis1=-2, axis2=-1)), axis=-1)


def _leverage(Ax: np.ndarray) -> np.ndarray:
    Q, _ = _factor(Ax, np.ones(Ax.shape[:-1]))
    return _row_sq(Q)


def _john_sigma(Ax: np.ndarray, w: np.ndarray, alpha: float) -> np.ndarray:
    Q, _ = _factor(Ax, w**alpha)
    return _row_sq(Q)


def _john_solve(
    Ax: np.ndarray,
    tol: float = JOHN_TOL,
    max_iter: int = JOHN_MAX_ITER,
    eta: float = JOHN_ETA,
    w0: np.ndarray | None = None,
):
    """Fixed-point iteration ``w <- (1-eta) w + eta (sigma(w) + beta)``.

    Works on a batch; elements stop updating as soon as their own residual
    drops below ``tol`` so each result is independent of its batch-mates.
    """
    m, d = Ax.shape[-2:]
    _, alpha, beta = john_constants(m, d)
    batch = Ax.shape[:-2]
    if w0 is None:
        w = np.full(batch + (m,), 1.5 * d / m)
    else:
        w = np.array(np.broadcast_to(w0, batch + (m,)), dtype=float)
    iters = np.zeros(batch, dtype=int)
    residual = np.full(batch, np.inf)
    active = np.ones(batch, dtype=bool)
    for it in range(max_iter + 1):
        target = _john_sigma(Ax, w, alpha) + beta
        res = np.max(np.abs(w - target), axis=-1)
        residual = np.where(active, res, residual)
        active = active & (res > tol)
        if not active.any():
            break
        if it == max_iter:
            break
        w = np.where(active[..., None], (1.0 - eta) * w + eta * target, w)
        iters = iters + active
    return w, residual, iters


def metric_batch(
    Ax: np.ndarray,
    kind: str,
    john_tol: float = JOHN_TOL,
    john_w0: np.ndarray | None = None,
    john_max_iter: int = JOHN_MAX_ITER,
):
    """Weights and factorised metric for a batch of points.

    Returns ``(w, Q, R, half_log_det, john_residual)`` where
    ``W^{1/2} A_x = Q R``; the residual is ``None`` except for the John kind.
    """
    m, d = Ax.shape[-2:]
    residual = None
    if kind == "dikin":
        w = np.ones(Ax.shape[:-1])
    elif kind == "vaidya":
        w = _leverage(Ax) + d / m
    elif kind == "john":
        w, residual, _ = _john_solve(Ax, tol=john_tol, max_iter=john_max_iter, w0=john_w0)
    else:
        raise ValueError(f"unknown metric kind {kind!r}")
    Q, R = _factor(Ax, w)
    return w, Q, R, _half_log_det_r(R), residual


# --- single-point API ---------------------------------------------------------


def _metric(P: Polytope, x, kind: str, weights: np.ndarray) -> LocalMetric:
    x = np.asarray(x, dtype=float)
    Ax, s = scaled_rows(P, x)
    weights = np.asarray(weights, dtype=float)
    _, R = _factor(Ax, weights)
    return LocalMetric(kind, x.copy(), _gram(Ax, weights), R.T.copy(), float(_half_log_det_r(R)), weights, s)


def log_barrier_hessian(P: Polytope, x) -> LocalMetric:
    return _metric(P, x, "dikin", np.ones(P.m))


def leverage_scores(P: Polytope, x) -> np.ndarray:
    """Leverage scores ``a_i^T H_x^{-1} a_i / s_i^2`` from one Cholesky of ``H_x``."""
    Ax, _ = scaled_rows(P, x)
    return _leverage(Ax)


def vaidya_metric(P: Polytope, x) -> LocalMetric:
    return _metric(P, x, "vaidya", leverage_scores(P, x) + P.d / P.m)


def vaidya_theta(P: Polytope, x) -> np.ndarray:
    return vaidya_metric(P, x).theta(P)


def john_weights(
    P: Polytope,
    x,
    tol: float = JOHN_TOL,
    max_iter: int = JOHN_MAX_ITER,
    eta: float = JOHN_ETA,
    w0=None,
) -> JohnWeights:
    """Solve ``w_i = sigma_{x,w,i} + d/(2m)`` by (optionally damped) fixed-point iteration.

    ``sigma_{x,w}`` is the diagonal of ``W^{a/2} A_x (A_x^T W^a A_x)^{-1} A_x^T W^{a/2}``
    with ``a = 1 - 1/log2(2m/d)``. Raises NoConvergence after ``max_iter``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    Ax, _ = scaled_rows(P, x)
    w, res, iters = _john_solve(Ax, tol=tol, max_iter=max_iter, eta=eta, w0=w0)
    if res > tol:
        raise NoConvergence(f"John weights residual {float(res):.3g} after {max_iter} iterations")
    return JohnWeights(w, float(res), int(iters))


def john_metric(P: Polytope, x, weights: JohnWeights | None = None) -> LocalMetric:
    if weights is None:
        weights = john_weights(P, x)
    return _metric(P, x, "john", weights.zeta)


def john_theta(P: Polytope, x, weights: JohnWeights | None = None) -> np.ndarray:
    return john_metric(P, x, weights).theta(P)


def local_metric(P: Polytope, x, kind: str, john_tol: float = JOHN_TOL) -> LocalMetric:
    if kind == "dikin":
        return log_barrier_hessian(P, x)
    if kind == "vaidya":
        return vaidya_metric(P, x)
    if kind == "john":
        return john_metric(P, x, john_weights(P, x, tol=john_tol))
    raise ValueError(f"unknown metric kind {kind!r}")


def projection_matrix(P: Polytope, x, w=None, alpha: float = 1.0) -> np.ndarray:
    """Dense ``W^{a/2} A_x (A_x^T W^a A_x)^{-1} A_x^T W^{a/2}`` (m x m)."""
    Ax, _ = scaled_rows(P, x)
    w = np.ones(P.m) if w is None else np.asarray(w, dtype=float)
    B = Ax * (w ** (alpha / 2))[:, None]
    # QR keeps the projection accurate when B is badly scaled
    Q, _ = np.linalg.qr(B)
    return Q @ Q.T


# --- analytic gradients -------------------------------------------------------


def grad_leverage(P: Polytope, x, i: int) -> np.ndarray:
    """Gradient of ``sigma_i`` in x: ``2 A_x^T (Sigma - P^(2)) e_i``."""
    Ax, _ = scaled_rows(P, x)
    Q, _ = _factor(Ax, np.ones(P.m))
    col = Q @ Q[i]  # column i of the projection matrix
    v = -(col**2)
    v[i] += col[i]
    return 2.0 * Ax.T @ v


def grad_half_log_det_vaidya(P: Polytope, x) -> np.ndarray:
    """Gradient of ``0.5 log det V_x``: ``A_x^T (2 Sigma + beta I - P^(2)) theta``."""
    Ax, _ = scaled_rows(P, x)
    beta = P.d / P.m
    Pm = projection_matrix(P, x)
    sigma = np.diag(Pm).copy()
    V = vaidya_metric(P, x)
    theta = V.theta(P)
    return Ax.T @ ((2.0 * sigma + beta) * theta - (Pm**2) @ theta)


def grad_john_weights(P: Polytope, x, weights: JohnWeights) -> np.ndarray:
    """Jacobian of the John weights (m x d).

    Row i equals ``zeta_i * [2 (G - a Lam)^{-1} Lam A_x]_i`` where
    ``G = diag(zeta)`` and ``Lam = Sigma - P^(2)`` for the John projection.
    """
    Ax, _ = scaled_rows(P, x)
    _, alpha, _ = john_constants(P.m, P.d)
    zeta = np.asarray(weights.zeta, dtype=float)
    Pm = projection_matrix(P, x, zeta, alpha)
    Lam = np.diag(np.diag(Pm)) - Pm**2
    K = np.diag(zeta) - alpha * Lam
    try:
        F = np.linalg.solve(K, 2.0 * Lam @ Ax)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("weight sensitivity system is singular") from exc
    return zeta[:, None] * F
