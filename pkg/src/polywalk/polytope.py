"""Polytopes {x : Ax <= b}, benchmark families and geometric primitives."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .errors import (
    BadParams,
    DegeneratePair,
    DimensionMismatch,
    EmptyInterior,
    NoConvergence,
    RankDeficient,
    UnboundedDirection,
)

ARMIJO = 1e-4
BACKTRACK = 0.5


@dataclass(frozen=True, eq=False)
class Polytope:
    """Immutable constraint system ``A x <= b`` with a strictly interior witness.

    Build instances with :func:`new_polytope`; the constructor itself does no
    validation.
    """

    A: np.ndarray
    b: np.ndarray
    witness: np.ndarray

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def __repr__(self) -> str:
        return f"Polytope(m={self.m}, d={self.d})"


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


def new_polytope(A, b) -> Polytope:
    """Validate ``(A, b)`` and return a :class:`Polytope`.

    Raises DimensionMismatch, RankDeficient or EmptyInterior. Boundedness is
    not checked here; unbounded rays surface later as UnboundedDirection.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"A has shape {A.shape}, b has shape {b.shape}")
    if A.shape[1] == 0 or A.shape[0] == 0:
        raise DimensionMismatch("empty constraint system")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise BadParams("A and b must be finite")
    m, d = A.shape
    if m < d or np.linalg.matrix_rank(A) < d:
        raise RankDeficient(f"rank(A) < d = {d}")
    witness = _phase_one(A, b)
    return Polytope(_frozen(A), _frozen(b), _frozen(witness))


def _phase_one(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Depth-maximising LP: max t s.t. a_i.x + t |a_i| <= b_i, t <= 1.
    m, d = A.shape
    norms = np.linalg.norm(A, axis=1)
    if np.any(norms == 0):
        if np.any(b[norms == 0] <= 0):
            raise EmptyInterior("zero row with non-positive offset")
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, norms[:, None]])
    bounds = [(None, None)] * d + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=bounds, method="highs")
    if res.status == 2:
        raise EmptyInterior("constraints are infeasible")
    if res.status != 0:
        raise EmptyInterior(f"phase-I LP failed: {res.message}")
    depth = res.x[-1]
    scale = max(1.0, float(np.max(np.abs(b[norms > 0]) / norms[norms > 0])))
    x = res.x[:d]
    if depth <= 1e-10 * scale or np.min(b - A @ x) <= 0:
        raise EmptyInterior(f"no strictly feasible point (depth {depth:.3g})")
    return x


def slackness(P: Polytope, x) -> np.ndarray:
    """Return ``b - A x``; works on a single point or a stack of points."""
    x = np.asarray(x, dtype=float)
    return P.b - x @ P.A.T


def contains_interior(P: Polytope, x) -> bool:
    return bool(np.min(slackness(P, x)) > 0)


def chord_endpoints(P: Polytope, x, u) -> tuple[float, float]:
    """Parameters ``(t_minus, t_plus)`` where the line ``x + t u`` leaves P."""
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        raise BadParams("direction must be nonzero")
    s = slackness(P, x)
    au = P.A @ u
    pos = au > 0
    neg = au < 0
    if not pos.any() or not neg.any():
        raise UnboundedDirection(f"ray along {'+' if not pos.any() else '-'}u is unbounded")
    t_plus = float(np.min(s[pos] / au[pos]))
    t_minus = float(np.max(s[neg] / au[neg]))
    return t_minus, t_plus


def cross_ratio(P: Polytope, x, y) -> float:
    """Chord cross-ratio ``|e(x)-e(y)| |x-y| / (|e(x)-x| |e(y)-y|)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = y - x
    if np.linalg.norm(u) <= 1e-14 * (1.0 + np.linalg.norm(x)):
        raise DegeneratePair("x and y coincide")
    t_minus, t_plus = chord_endpoints(P, x, u)
    return (t_plus - t_minus) / (-t_minus * (t_plus - 1.0))


def cross_ratio_lower_bound(P: Polytope, x, y) -> float:
    """``max_i |a_i.(x - y)| / s_{x,i}``, the one-sided chord ratio at x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(P.A @ (x - y)) / slackness(P, x)))


def _barrier_newton(
    G: np.ndarray,
    h: np.ndarray,
    y0: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> np.ndarray:
    # Damped Newton on -sum log(h - G y) with Armijo backtracking.
    def f(y):
        s = h - G @ y
        if np.min(s) <= 0:
            return np.inf
        return -np.sum(np.log(s))

    y = np.array(y0, dtype=float)
    fy = f(y)
    for _ in range(max_iter):
        s = h - G @ y
        Gs = G / s[:, None]
        grad = Gs.sum(axis=0)
        H = Gs.T @ Gs
        step = -np.linalg.solve(H, grad)
        lam2 = -grad @ step
        lam = np.sqrt(max(lam2, 0.0))
        if lam <= tol:
            # one more full step inside the quadratic regime polishes to rounding level
            return y + step
        if lam < 0.25:
            # self-concordance: full step stays interior and converges quadratically;
            # an Armijo test here would stall once lam^2 drops below rounding in f
            y = y + step
            fy = f(y)
            continue
        t = 1.0
        while True:
            cand = y + t * step
            fc = f(cand)
            if fc <= fy - ARMIJO * t * lam2:
                break
            t *= BACKTRACK
            if t < 1e-20:
                raise NoConvergence("line search stalled")
        y, fy = cand, fc
    raise NoConvergence(f"Newton did not converge in {max_iter} iterations")


def analytic_center(P: Polytope, tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Minimiser of the log barrier ``-sum log(b - A x)``."""
    return _barrier_newton(P.A, P.b, P.witness, tol=tol, max_iter=max_iter)


def bounding_box(P: Polytope) -> tuple[np.ndarray, np.ndarray]:
    """Exact axis-aligned bounding box via 2d linear programs."""
    lo = np.empty(P.d)
    hi = np.empty(P.d)
    for j in range(P.d):
        c = np.zeros(P.d)
        for sign, out in ((1.0, lo), (-1.0, hi)):
            c[j] = sign
            res = linprog(c, A_ub=P.A, b_ub=P.b, bounds=[(None, None)] * P.d, method="highs")
            if res.status != 0:
                raise UnboundedDirection(f"polytope unbounded along axis {j}")
            out[j] = res.x[j]
    return lo, hi


def box_bounds(P: Polytope):
    """Return ``(lo, hi)`` if P is an axis-aligned box, else ``None``."""
    A = P.A
    nz = A != 0
    if not np.all(nz.sum(axis=1) == 1):
        return None
    lo = np.full(P.d, -np.inf)
    hi = np.full(P.d, np.inf)
    axis = np.argmax(nz, axis=1)
    coef = A[np.arange(P.m), axis]
    bound = P.b / coef
    for j, c, v in zip(axis, coef, bound):
        if c > 0:
            hi[j] = min(hi[j], v)
        else:
            lo[j] = max(lo[j], v)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        return None
    return lo, hi


# --- benchmark families -------------------------------------------------------


def hypercube_repeated(d: int, m: int) -> Polytope:
    """``[-1, 1]^d`` with its 2d facets stacked ``m / (2d)`` times."""
    if d < 1 or m < 2 * d or m % (2 * d):
        raise BadParams(f"m={m} must be a positive multiple of 2d={2 * d}")
    A = np.vstack([np.eye(d), -np.eye(d)])
    reps = m // (2 * d)
    return new_polytope(np.tile(A, (reps, 1)), np.ones(m))


def random_symmetric_2d(m: int, seed=None) -> Polytope:
    """Random planar polytope with ``b = 1`` and rows ``±(u, v)``, ``u, v ~ U[0, 1]``.

    Every such polytope contains the segment from (-1, 1) to (1, -1).
    """
    if m < 2 or m % 2:
        raise BadParams(f"m={m} must be even and >= 2")
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.0, 1.0, size=(m, 2))
    flip = rng.random(m) < 0.5
    A[flip] *= -1.0
    P = new_polytope(A, np.ones(m))
    try:
        bounding_box(P)
    except UnboundedDirection as exc:
        raise BadParams(f"seed {seed} gives an unbounded polytope; use larger m") from exc
    return P


def regular_polygon(m: int) -> Polytope:
    """Regular m-gon inscribed in the unit circle, one half-plane per edge."""
    if m < 3:
        raise BadParams("a polygon needs m >= 3")
    theta = (2 * np.arange(m) + 1) * np.pi / m
    A = np.column_stack([np.cos(theta), np.sin(theta)])
    return new_polytope(A, np.full(m, np.cos(np.pi / m)))


FAMILIES: dict[str, Callable[..., Polytope]] = {
    "hypercube_repeated": lambda params, seed: hypercube_repeated(int(params["d"]), int(params["m"])),
    "random_symmetric_2d": lambda params, seed: random_symmetric_2d(int(params["m"]), seed),
    "regular_polygon": lambda params, seed: regular_polygon(int(params["m"])),
}


def generate(family: str, params: dict, seed=None) -> Polytope:
    try:
        builder = FAMILIES[family]
    except KeyError:
        raise BadParams(f"unknown family {family!r}; choose from {sorted(FAMILIES)}") from None
    try:
        return builder(params, seed)
    except KeyError as exc:
        raise BadParams(f"family {family!r} needs parameter {exc.args[0]!r}") from None


# --- text serialisation -------------------------------------------------------


def dumps(P: Polytope) -> str:
    buf = io.StringIO()
    buf.write(f"{P.m} {P.d}\n")
    rows = np.hstack([P.A, P.b[:, None]])
    for row in rows:
        buf.write(" ".join("%.17g" % v for v in row))
        buf.write("\n")
    return buf.getvalue()


def loads(text: str) -> Polytope:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DimensionMismatch("empty polytope file")
    m, d = (int(tok) for tok in lines[0].split())
    if len(lines) - 1 != m:
        raise DimensionMismatch(f"header says {m} rows, found {len(lines) - 1}")
    rows = np.array([[float(tok) for tok in ln.split()] for ln in lines[1:]])
    if rows.shape != (m, d + 1):
        raise DimensionMismatch(f"expected {d + 1} columns per row")
    return new_polytope(rows[:, :d], rows[:, d])


def save(P: Polytope, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(P))


def load(path: str | os.PathLike) -> Polytope:
    with open(path) as fh:
        return loads(fh.read())
