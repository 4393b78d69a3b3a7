"""Warm starts, approximate mixing times, grid TV and slope fits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import brentq
from scipy.spatial import ConvexHull, HalfspaceIntersection
from scipy.special import erf

from .errors import BadParams, DegenerateInput, RejectionStall, TooFewSamples
from .polytope import Polytope, bounding_box, box_bounds, slackness
from .walks import Ensemble, WalkConfig, chain_rng

STALL_DRAWS = 1_000_000
STALL_RATE = 1e-4
WARM_BLOCK = 64
MC_DRAWS = 200_000
DENSE_UNTIL = 1000
COARSE_EVERY = 10


# --- warm start ---------------------------------------------------------------


@dataclass
class WarmStart:
    sigma: float
    M_bound: float
    samples_requested: int
    samples_accepted: int
    # half-width of a 95% interval on M_bound; zero when computed analytically
    M_ci: float = 0.0


def _box_gaussian_mass(lo, hi, sigma) -> float:
    r = math.sqrt(2.0) * sigma
    return float(np.prod(0.5 * (erf(np.asarray(hi) / r) - erf(np.asarray(lo) / r))))


def polytope_volume(P: Polytope) -> float:
    """Exact volume from the vertex enumeration (d >= 2) or the interval (d = 1)."""
    box = box_bounds(P)
    if box is not None:
        return float(np.prod(box[1] - box[0]))
    if P.d == 1:
        lo, hi = bounding_box(P)
        return float(hi[0] - lo[0])
    hs = HalfspaceIntersection(np.hstack([P.A, -P.b[:, None]]), P.witness)
    return float(ConvexHull(hs.intersections).volume)


def warmness(P: Polytope, sigma: float, rng=None, draws: int = MC_DRAWS) -> tuple[float, float]:
    """Certified warmness of ``N(0, sigma^2 I)`` truncated to P and its CI half-width.

    The bound is ``vol(K) * f_max / Z`` with ``f_max`` the untruncated peak
    density and ``Z`` the Gaussian mass of K. Boxes are exact; other
    polytopes estimate ``Z`` by Monte Carlo.
    """
    d = P.d
    log_fmax = -0.5 * d * math.log(2.0 * math.pi * sigma * sigma)
    vol = polytope_volume(P)
    box = box_bounds(P)
    if box is not None:
        Z = _box_gaussian_mass(box[0], box[1], sigma)
        return float(vol * math.exp(log_fmax) / Z), 0.0
    rng = np.random.default_rng(0) if rng is None else rng
    X = sigma * rng.standard_normal((draws, d))
    p = float(np.mean(np.all(slackness(P, X) > 0, axis=1)))
    if p == 0.0:
        return math.inf, math.inf
    M = vol * math.exp(log_fmax) / p
    se = math.sqrt(p * (1.0 - p) / draws)
    return M, 1.96 * M * se / p


def _draw_interior(P: Polytope, sigma: float, rng) -> tuple[np.ndarray, int]:
    drawn = 0
    while True:
        X = sigma * rng.standard_normal((WARM_BLOCK, P.d))
        inside = np.flatnonzero(np.all(slackness(P, X) > 0, axis=1))
        if inside.size:
            drawn += int(inside[0]) + 1
            return X[inside[0]], drawn
        drawn += WARM_BLOCK
        if drawn >= STALL_DRAWS:
            raise RejectionStall(f"no interior draw in {drawn} Gaussian samples at sigma={sigma}")


def warm_start(P: Polytope, sigma: float, rng) -> tuple[np.ndarray, WarmStart]:
    """One draw of ``N(0, sigma^2 I)`` conditioned on the interior of P."""
    if not sigma > 0:
        raise BadParams("sigma must be positive")
    x, drawn = _draw_interior(P, sigma, rng)
    M, ci = warmness(P, sigma)
    return x, WarmStart(float(sigma), M, drawn, 1, ci)


def warm_starts(P: Polytope, sigma: float, rngs) -> tuple[np.ndarray, WarmStart]:
    """One warm-start draw per generator, in order."""
    if not sigma > 0:
        raise BadParams("sigma must be positive")
    X = np.empty((len(rngs), P.d))
    total = 0
    for i, g in enumerate(rngs):
        X[i], n = _draw_interior(P, sigma, g)
        total += n
        if total >= STALL_DRAWS and (i + 1) / total < STALL_RATE:
            raise RejectionStall(f"acceptance {(i + 1) / total:.2g} over {total} draws")
    M, ci = warmness(P, sigma)
    return X, WarmStart(float(sigma), M, total, len(rngs), ci)


def cube_warmness(d: int, sigma: float) -> float:
    return warmness_box(np.full(d, -1.0), np.ones(d), sigma)


def warmness_box(lo, hi, sigma: float) -> float:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    d = lo.size
    log_fmax = -0.5 * d * math.log(2.0 * math.pi * sigma * sigma)
    return float(np.prod(hi - lo) * math.exp(log_fmax) / _box_gaussian_mass(lo, hi, sigma))


def default_sigma(d: int, M_target: float = 100.0) -> float:
    """Warm-start std for ``[-1, 1]^d``: 0.2 in the plane, else ``M_bound = M_target``."""
    if d == 2:
        return 0.2
    if cube_warmness(d, 10.0) >= M_target:
        raise BadParams(f"no sigma reaches warmness {M_target} in dimension {d}")
    return float(brentq(lambda s: cube_warmness(d, s) - M_target, 1e-3, 10.0, xtol=1e-12))


# --- approximate mixing time --------------------------------------------------


def target_set_level(d: int) -> float:
    """Level ``c`` with ``(1 - c)^d = 1/2``, so S_d holds half the cube's volume."""
    if d < 1:
        raise BadParams("d must be >= 1")
    return 1.0 - 2.0 ** (-1.0 / d)


def in_target_set(X, c: float) -> np.ndarray:
    return np.all(np.abs(np.asarray(X, dtype=float)) >= c, axis=-1)


@dataclass
class MixResult:
    n: int
    d: int
    khat: int
    threshold: float
    replications: int
    target_set_level: float
    mixed: bool
    walk: str = ""
    r: float = float("nan")
    seed: int = 0
    family: str = "hypercube_repeated"
    ks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    deficits: np.ndarray = field(default_factory=lambda: np.zeros(0))
    warm: WarmStart | None = None

    def khat_at(self, threshold: float) -> int | None:
        """First recorded k whose deficit is within ``threshold`` (or None)."""
        hit = np.flatnonzero(self.deficits <= threshold)
        return int(self.ks[hit[0]]) if hit.size else None

    def row(self) -> list:
        return [self.family, self.n, self.d, self.walk, "%.17g" % self.r, self.khat,
                "%.17g" % self.threshold, self.replications, self.seed]


MIX_HEADER = ["family", "n", "d", "walk", "r", "khat", "threshold", "replications", "seed"]


def write_mix_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MIX_HEADER)
        for res in results:
            w.writerow(res.row())


def _is_unit_cube(P: Polytope) -> bool:
    box = box_bounds(P)
    return box is not None and np.allclose(box[0], -1.0) and np.allclose(box[1], 1.0)


def khat_mix(P: Polytope, cfg: WalkConfig, ensemble_size: int, sigma: float,
             threshold: float = 0.05, max_k: int = 100_000, seed: int = 0,
             threads: int = 1) -> MixResult:
    """First k with ``pi(S_d) - T^k(S_d) <= threshold`` over an ensemble of chains.

    Each chain draws its warm start and then its walk from its own stream.
    The deficit is checked every step up to k = 1000 and every 10 steps
    afterwards, so beyond 1000 the answer over-estimates by at most 9.
    """
    if ensemble_size < 50:
        raise BadParams("ensemble_size must be >= 50")
    if not _is_unit_cube(P):
        raise BadParams("khat_mix needs a [-1, 1]^d polytope; use grid_tv_to_uniform otherwise")
    c = target_set_level(P.d)
    rngs = [chain_rng(seed, i) for i in range(ensemble_size)]
    X0, warm = warm_starts(P, sigma, rngs)
    ks, defs = [], []

    def record(k, X):
        ks.append(k)
        defs.append(0.5 - float(np.mean(in_target_set(X, c))))
        return defs[-1] <= threshold

    done = record(0, X0)
    k = 0
    if not done:
        with Ensemble.from_rngs(P, cfg, X0, rngs, threads=threads) as ens:
            while k < max_k:
                ens.step()
                k += 1
                if (k <= DENSE_UNTIL or k % COARSE_EVERY == 0 or k == max_k) and record(k, ens.X):
                    done = True
                    break
    return MixResult(P.m, P.d, k, threshold, ensemble_size, c, done, cfg.kind, cfg.r, seed,
                     ks=np.asarray(ks), deficits=np.asarray(defs), warm=warm)


# --- grid total variation -----------------------------------------------------


def cell_masses(P: Polytope, grid_n: int = 10, subsample: int = 32):
    """Uniform-measure mass of each bounding-box grid cell and the box edges."""
    if P.d != 2:
        raise BadParams("grid diagnostics need d = 2")
    lo, hi = bounding_box(P)
    ex = np.linspace(lo[0], hi[0], grid_n + 1)
    ey = np.linspace(lo[1], hi[1], grid_n + 1)
    fine = grid_n * subsample
    cx = lo[0] + (np.arange(fine) + 0.5) * (hi[0] - lo[0]) / fine
    cy = lo[1] + (np.arange(fine) + 0.5) * (hi[1] - lo[1]) / fine
    G = np.stack(np.meshgrid(cx, cy, indexing="ij"), axis=-1).reshape(-1, 2)
    inside = np.all(slackness(P, G) > 0, axis=1).reshape(grid_n, subsample, grid_n, subsample)
    mass = inside.sum(axis=(1, 3)).astype(float)
    return mass / mass.sum(), (ex, ey)


def grid_histogram(samples, edges) -> np.ndarray:
    ex, ey = edges
    S = np.asarray(samples, dtype=float)
    # clip so points on the outer edge land in the last cell
    ix = np.clip(np.searchsorted(ex, S[:, 0], side="right") - 1, 0, len(ex) - 2)
    iy = np.clip(np.searchsorted(ey, S[:, 1], side="right") - 1, 0, len(ey) - 2)
    H = np.zeros((len(ex) - 1, len(ey) - 1))
    np.add.at(H, (ix, iy), 1.0)
    return H / len(S)


def tv_distance(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def grid_tv_to_uniform(P: Polytope, samples, grid_n: int = 10, subsample: int = 32) -> float:
    """Total variation between the gridded samples and the uniform law on P."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise BadParams("samples must be an (N, 2) array")
    if len(samples) < 10 * grid_n * grid_n:
        raise TooFewSamples(f"need at least {10 * grid_n * grid_n} samples, got {len(samples)}")
    pi, edges = cell_masses(P, grid_n, subsample)
    return tv_distance(grid_histogram(samples, edges), pi)


def sampling_noise(pi, n: int) -> float:
    """Expected TV scale of an i.i.d. histogram of size n."""
    pi = np.asarray(pi, dtype=float)
    return float(np.sum(np.sqrt(pi * (1.0 - pi) / n)) / 2.0)


def uniform_samples(P: Polytope, n: int, rng) -> np.ndarray:
    """I.i.d. uniform points of P by rejection from its bounding box."""
    lo, hi = bounding_box(P)
    out = []
    got = 0
    while got < n:
        X = lo + (hi - lo) * rng.random((max(n, 1024), P.d))
        X = X[np.all(slackness(P, X) > 0, axis=1)]
        out.append(X)
        got += len(X)
    return np.concatenate(out)[:n]


# --- fits and traces ----------------------------------------------------------


def fit_loglog_slope(xs, ys) -> tuple[float, float, float]:
    """OLS of log y on log x; returns ``(slope, intercept, r^2)``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise BadParams("xs and ys must be 1-D and the same length")
    if xs.size < 3:
        raise DegenerateInput("need at least 3 points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise BadParams("xs and ys must be positive")
    if np.all(xs == xs[0]):
        raise DegenerateInput("all xs are equal")
    fit = stats.linregress(np.log(xs), np.log(ys))
    return float(fit.slope), float(fit.intercept), float(fit.rvalue**2)


def random_direction(d: int, direction_seed: int) -> np.ndarray:
    u = np.random.default_rng(direction_seed).standard_normal(d)
    return u / np.linalg.norm(u)


def random_projection_trace(trajectory, direction_seed: int) -> np.ndarray:
    """``<u, x_k>`` for a seeded uniform unit vector u."""
    pts = getattr(trajectory, "points", trajectory)
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise BadParams("trajectory must be a nonempty (k, d) array")
    return pts @ random_direction(pts.shape[1], direction_seed)
