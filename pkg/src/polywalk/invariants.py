"""Randomised invariant checks for the barrier metrics and local geometry.

Each check returns a list of human-readable violations; an empty list means
the instance passed. Dense projection matrices are built here on purpose so
the checks do not share code paths with the O(m d^2) kernels they audit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh, svd

from . import barriers
from .polytope import Polytope, chord_endpoints, hypercube_repeated, new_polytope, random_symmetric_2d, regular_polygon
from .errors import BadParams

REL_TOL = 1e-8
INEQ_SLACK = 1e-10


@dataclass
class Instance:
    label: str
    P: Polytope
    x: np.ndarray


def _affine_cube(d: int, m: int, rng) -> tuple[Polytope, np.ndarray]:
    # [-1,1]^d with repeated rows pushed through x -> T x + t
    base = hypercube_repeated(d, m)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    T = Q * np.exp(rng.uniform(-1.0, 1.0, d))
    t = rng.uniform(-1.0, 1.0, d)
    Tinv = np.linalg.inv(T)
    A = base.A @ Tinv
    return new_polytope(A, base.b + A @ t), t


def _gaussian(d: int, m: int, rng) -> tuple[Polytope, np.ndarray]:
    # random rows plus a box at distance 2 so the set is bounded
    k = m - 2 * d
    A = np.vstack([rng.standard_normal((k, d)), np.eye(d), -np.eye(d)])
    b = np.concatenate([rng.uniform(0.5, 1.5, k), np.full(2 * d, 2.0)])
    return new_polytope(A, b), np.zeros(d)


def random_instance(rng, d: int | None = None) -> Instance:
    """Random (polytope, interior point) with d in 1..8 and m in [2d, 40d]."""
    if d is None:
        d = int(rng.integers(1, 9))
    choices = ["cube", "gaussian"] + (["symmetric", "polygon"] if d == 2 else [])
    family = choices[int(rng.integers(len(choices)))]
    if family == "cube":
        reps = int(rng.integers(1, 21))
        P, center = _affine_cube(d, 2 * d * reps, rng)
    elif family == "gaussian":
        P, center = _gaussian(d, int(rng.integers(2 * d, 40 * d + 1)), rng)
    elif family == "symmetric":
        while True:
            try:
                P = random_symmetric_2d(2 * int(rng.integers(4, 41)), int(rng.integers(2**31)))
                break
            except BadParams:
                continue
        center = np.zeros(2)
    else:
        P, center = regular_polygon(int(rng.integers(3, 81))), np.zeros(2)
    u = rng.standard_normal(d)
    _, t_plus = chord_endpoints(P, center, u)
    # mostly bulk points, sometimes within 1e-2..1e-6 of the boundary
    lam = rng.uniform(0.0, 0.95) if rng.random() < 0.8 else 1.0 - 10.0 ** -rng.uniform(2, 6)
    return Instance(f"{family}(m={P.m},d={d})", P, center + lam * t_plus * u)


def _close(a, b, what, out, rel=REL_TOL):
    scale = max(1.0, abs(b))
    if abs(a - b) > rel * scale:
        out.append(f"{what}: {a!r} != {b!r}")


def _close_vec(a, b, what, out, rel=REL_TOL):
    err = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
    scale = max(float(np.max(np.abs(b))), 1e-300)
    if err > rel * scale:
        out.append(f"{what}: max deviation {err:.3g} (scale {scale:.3g})")


def _dense_theta(Ax, w) -> np.ndarray:
    # theta_ij = a_i^T M^{-1} a_j / (s_i s_j) from the SVD of W^{1/2} A_x
    U, _, _ = svd(Ax * np.sqrt(w)[:, None], full_matrices=False)
    Us = U / np.sqrt(w)[:, None]
    return Us @ Us.T


def _le(a, b, what, out, slack=INEQ_SLACK):
    if a > b + slack * max(1.0, abs(b)):
        out.append(f"{what}: {a!r} > {b!r}")


def _sandwich(M, H, lo, hi, what, out):
    # generalised eigenvalues of (M, H) must lie in [lo, hi]
    ev = eigh(M, H, eigvals_only=True)
    _le(lo, ev.min(), f"{what} lower", out)
    _le(ev.max(), hi, f"{what} upper", out)


def check_metrics(P: Polytope, x) -> list[str]:
    """Leverage, Vaidya and John identities at one interior point."""
    out: list[str] = []
    m, d = P.m, P.d
    Ax, _ = barriers.scaled_rows(P, x)
    H = barriers.log_barrier_hessian(P, x).M

    Pm = barriers.projection_matrix(P, x)
    sigma = barriers.leverage_scores(P, x)
    _close_vec(sigma, np.diag(Pm), "sigma vs dense projection", out)
    _le(-sigma.min(), 0.0, "sigma >= 0", out)
    _le(sigma.max(), 1.0, "sigma <= 1", out)
    _close(sigma.sum(), d, "sum sigma", out)
    _close_vec(sigma, np.sum(Pm**2, axis=1), "sigma_i = sum_j P_ij^2", out)
    lam_min = np.linalg.eigvalsh(np.diag(sigma) - Pm**2).min()
    _le(-lam_min, 0.0, "Sigma - P^(2) psd", out)

    beta = d / m
    V = barriers.vaidya_metric(P, x)
    wv = sigma + beta
    theta = V.theta(P)
    theta_ij = _dense_theta(Ax, wv)
    _close_vec(theta, np.diag(theta_ij), "theta_V vs dense", out)
    _le(theta.max(), np.sqrt(m / d), "theta_V <= sqrt(m/d)", out)
    _close(float(theta @ wv), d, "sum theta (sigma+beta)", out)
    rhs = (theta_ij**2) @ wv
    _close_vec(theta, rhs, "theta_i = sum_j w_j theta_ij^2", out)
    _le(float(theta**2 @ wv), np.sqrt(m * d), "sum theta^2 (sigma+beta)", out)
    _sandwich(V.M, H, beta, 1.0 + beta, "Vaidya sandwich", out)

    _, alpha, beta_j = barriers.john_constants(m, d)
    jw = barriers.john_weights(P, x)
    zeta = jw.zeta
    PJ = barriers.projection_matrix(P, x, zeta, alpha)
    _le(float(np.max(np.abs(zeta - np.diag(PJ) - beta_j))), barriers.JOHN_TOL, "John fixed point residual", out)
    _le(beta_j, zeta.min(), "zeta >= beta_J", out)
    _le(zeta.max(), 1.0 + beta_j, "zeta <= 1 + beta_J", out)
    _close(zeta.sum(), 1.5 * d, "sum zeta", out)
    J = barriers.john_metric(P, x, jw)
    tj = J.theta(P)
    _le(-tj.min(), 0.0, "theta_J >= 0", out)
    _le(tj.max(), 4.0, "theta_J <= 4", out)
    _close(float(zeta @ tj), d, "sum zeta theta_J", out)
    tj_ij = _dense_theta(Ax, zeta)
    _close_vec(tj, np.diag(tj_ij), "theta_J vs dense", out)
    _close_vec(tj, (tj_ij**2) @ zeta, "theta_J,i = sum_j zeta_j theta_ij^2", out)
    _le(float(tj**2 @ zeta), 4.0 * d, "sum zeta theta_J^2", out)
    _sandwich(J.M, H, beta_j, 1.0 + beta_j, "John sandwich", out)
    return out


def check_geometry(P: Polytope, x, rng, pairs: int = 200) -> list[str]:
    """Slackness and eigenvalue-sandwich bounds on random pairs around x."""
    out: list[str] = []
    m, d = P.m, P.d
    V = barriers.vaidya_metric(P, x)
    J = barriers.john_metric(P, x)
    s_x = V.slack
    Lv = V.chol
    root = (m * d) ** 0.25
    for _ in range(pairs):
        u = rng.standard_normal(d)
        # half the pairs in the t <= 1/12 regime, the rest at any interior distance
        if rng.random() < 0.5:
            t = rng.uniform(0.0, 1.0 / 12.0)
            dv = np.linalg.solve(Lv.T, u / np.linalg.norm(u)) * (t / root)
        else:
            _, t_plus = chord_endpoints(P, x, u)
            dv = rng.uniform(0.0, 0.999) * t_plus * u
            t = None
        y = x + dv
        s_y = P.b - P.A @ y
        if np.min(s_y) <= 0:
            continue
        nv = np.sqrt(V.norm_sq(dv))
        dev = np.max(np.abs(1.0 - s_y / s_x))
        _le(dev, (m / d) ** 0.25 * nv, "slackness bound (Vaidya)", out)
        _le(dev, 2.0 * np.sqrt(J.norm_sq(dv)), "slackness bound (John)", out)
        if t is not None:
            Vy = barriers.vaidya_metric(P, y).M
            ev = eigh(Vy, V.M, eigvals_only=True)
            t_eff = nv * root
            _le(1.0 - 8.0 * t_eff / np.sqrt(d), ev.min(), "eigenvalue sandwich lower", out)
            _le(ev.max(), 1.0 + 8.0 * t_eff / np.sqrt(d), "eigenvalue sandwich upper", out)
    return out


def run_suite(seed: int, instances: int = 100, pairs: int = 0) -> list[tuple[str, list[str]]]:
    """Check ``instances`` random instances; returns (label, violations) for failures."""
    rng = np.random.default_rng(seed)
    failures = []
    for k in range(instances):
        inst = random_instance(rng)
        errs = check_metrics(inst.P, inst.x)
        if pairs:
            errs += check_geometry(inst.P, inst.x, rng, pairs)
        if errs:
            failures.append((f"#{k} {inst.label}", errs))
    return failures


def rescaled_rows(P: Polytope, scale) -> Polytope:
    """Same set with row i of (A, b) multiplied by ``scale[i] > 0``."""
    scale = np.asarray(scale, dtype=float)[:, None]
    return new_polytope(P.A * scale, P.b * scale[:, 0])


def affine_image(P: Polytope, T, t) -> Polytope:
    """Image of P under ``x -> T x + t``."""
    A = P.A @ np.linalg.inv(T)
    return new_polytope(A, P.b + A @ t)


def walk_checks(seed: int, instances: int = 5, steps: int = 60) -> list[tuple[str, list[str]]]:
    """Interior-ness, ratio antisymmetry, row-scale invariance and affine equivariance of chains."""
    from .walks import WalkConfig, log_accept_ratio, run_chain

    rng = np.random.default_rng([seed, 1])
    failures = []
    for k in range(instances):
        inst = random_instance(rng, d=int(rng.integers(1, 5)))
        P, x0 = inst.P, inst.x
        for kind in barriers.KINDS:
            out: list[str] = []
            cfg = WalkConfig(kind, 0.5)
            tr = run_chain(P, cfg, x0, steps, seed + k)
            if np.min(P.b - tr.points @ P.A.T) <= 0:
                out.append("chain left the interior")
            z = tr.points[-1]
            if not np.array_equal(z, x0):
                a, b = log_accept_ratio(P, cfg, x0, z), log_accept_ratio(P, cfg, z, x0)
                _le(abs(a + b), 1e-12 * max(1.0, abs(a)), "log ratio antisymmetry", out, slack=0.0)
            Ps = rescaled_rows(P, np.exp(rng.uniform(-2, 2, P.m)))
            trs = run_chain(Ps, cfg, x0, steps, seed + k)
            _le(float(np.max(np.abs(trs.points - tr.points))), 1e-10, "row-scaling invariance", out, slack=0.0)
            T = np.linalg.qr(rng.standard_normal((P.d, P.d)))[0] * np.exp(rng.uniform(-1, 1, P.d))
            t = rng.standard_normal(P.d)
            tra = run_chain(affine_image(P, T, t), cfg, T @ x0 + t, steps, seed + k)
            mapped = tr.points @ T.T + t
            err = float(np.max(np.abs(tra.points - mapped)) / max(1.0, float(np.max(np.abs(mapped)))))
            _le(err, 1e-8, "affine equivariance", out, slack=0.0)
            if out:
                failures.append((f"walk #{k} {kind} {inst.label}", out))
    return failures
