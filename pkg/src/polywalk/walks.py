"""Metropolis-Hastings walks with Dikin, Vaidya and John proposals.

Proposals are Gaussian, ``z ~ N(x, c M_x^{-1})``, where ``M_x`` is the local
metric of the walk kind and ``c`` its covariance scale. The noise is drawn in
constraint space: with ``xi ~ N(0, I_m)``,

    z = x + sqrt(c) M_x^{-1} A_x^T W^{1/2} xi,

which has covariance ``c M_x^{-1}`` and maps exactly under affine changes of
coordinates, so seeded trajectories are equivariant, not only in law.

RNG contract: chain ``i`` of a run seeded with ``seed`` draws from
``PCG64(SeedSequence([seed, i]))``. Per step it consumes one uniform (lazy
coin), then ``m`` normals if the step is not lazy, then one uniform if the
proposal is feasible.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import barriers
from .barriers import KINDS, LocalMetric
from .errors import BadParams, NoConvergence, NoMove
from .polytope import Polytope

CHUNK = 32


def chain_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent stream for chain ``index`` under master ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


def covariance_scale(kind: str, r: float, m: int, d: int) -> float:
    if kind == "dikin":
        return r * r / d
    if kind == "vaidya":
        return r * r / math.sqrt(m * d)
    if kind == "john":
        kappa = math.log2(2.0 * m / d)
        return r * r / (d**1.5 * kappa**4)
    raise BadParams(f"unknown walk kind {kind!r}")


@dataclass(frozen=True)
class WalkConfig:
    kind: str
    r: float
    john_tol: float = barriers.JOHN_TOL
    lazy_prob: float = 0.5
    # replaces the derived covariance scale; carries no mixing guarantee
    scale_override: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BadParams(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.r > 0:
            raise BadParams("r must be positive")
        if not 0.0 <= self.lazy_prob <= 1.0:
            raise BadParams("lazy_prob must lie in [0, 1]")

    def scale(self, m: int, d: int) -> float:
        if self.scale_override is not None:
            return float(self.scale_override)
        return covariance_scale(self.kind, self.r, m, d)


@dataclass
class StepStats:
    lazy: int = 0
    infeasible: int = 0
    mh_reject: int = 0
    accept: int = 0

    @property
    def steps(self) -> int:
        return self.lazy + self.infeasible + self.mh_reject + self.accept

    @property
    def acceptance(self) -> float:
        """Accepted fraction of the non-lazy proposals."""
        tried = self.infeasible + self.mh_reject + self.accept
        return self.accept / tried if tried else float("nan")

    def as_dict(self) -> dict:
        return {
            "steps": self.steps,
            "lazy": self.lazy,
            "infeasible": self.infeasible,
            "mh_reject": self.mh_reject,
            "accept": self.accept,
        }


@dataclass(frozen=True)
class ChainState:
    x: np.ndarray
    metric: LocalMetric
    stats: StepStats = field(default_factory=StepStats)
    john_residual: float | None = None


def init_state(P: Polytope, cfg: WalkConfig, x0) -> ChainState:
    x0 = np.asarray(x0, dtype=float)
    if cfg.kind == "john":
        w = barriers.john_weights(P, x0, tol=cfg.john_tol)
        return ChainState(x0.copy(), barriers.john_metric(P, x0, w), StepStats(), w.residual)
    return ChainState(x0.copy(), barriers.local_metric(P, x0, cfg.kind))


# --- batched engine -----------------------------------------------------------


class _Batch:
    """Arrays describing a group of chains that advance together."""

    def __init__(self, P: Polytope, cfg: WalkConfig, X: np.ndarray, rngs, W=None):
        self.P, self.cfg, self.rngs = P, cfg, list(rngs)
        X = np.array(X, dtype=float, ndmin=2)
        Ax, _ = barriers.scaled_rows(P, X)
        w0 = None if W is None else np.asarray(W, dtype=float)
        w, Q, R, hld, res = barriers.metric_batch(Ax, cfg.kind, cfg.john_tol, john_w0=w0)
        _check_john(res, cfg)
        self.X, self.W, self.Q, self.R, self.hld = X, w, Q, R, hld
        self.res = res
        self.counts = np.zeros((len(X), 4), dtype=np.int64)  # lazy, infeasible, reject, accept
        self.last_accept = np.zeros(len(X), dtype=bool)
        self.c = cfg.scale(P.m, P.d)

    def step(self) -> None:
        P, cfg = self.P, self.cfg
        coins = np.array([g.random() for g in self.rngs])
        move = np.flatnonzero(coins >= cfg.lazy_prob)
        self.counts[:, 0] += coins < cfg.lazy_prob
        self.last_accept[:] = False
        if move.size == 0:
            return
        xi = np.stack([self.rngs[i].standard_normal(P.m) for i in move])
        # M^{-1} A_x^T W^{1/2} xi = R^{-1} Q^T xi
        y = _tri_solve(self.R[move], np.einsum("cmd,cm->cd", self.Q[move], xi))
        Z = self.X[move] + math.sqrt(self.c) * y
        S = P.b - Z @ P.A.T
        ok = ~barriers.boundary_mask(P, Z, S) & np.all(S > 0, axis=1)
        self.counts[move[~ok], 1] += 1
        feas = move[ok]
        if feas.size == 0:
            return
        Z, S = Z[ok], S[ok]
        Axz = P.A / S[:, :, None]
        w0 = self.W[feas] if cfg.kind == "john" else None
        wz, Qz, Rz, hldz, resz = barriers.metric_batch(Axz, cfg.kind, cfg.john_tol, john_w0=w0)
        _check_john(resz, cfg)
        dz = Z - self.X[feas]
        qz = _sq_norm(Rz, dz)
        qx = _sq_norm(self.R[feas], dz)
        log_ratio = hldz - self.hld[feas] - (qz - qx) / (2.0 * self.c)
        u = np.array([self.rngs[i].random() for i in feas])
        acc = u < np.exp(np.minimum(log_ratio, 0.0))
        self.counts[feas[~acc], 2] += 1
        idx = feas[acc]
        self.counts[idx, 3] += 1
        self.last_accept[idx] = True
        self.X[idx] = Z[acc]
        self.W[idx] = wz[acc]
        self.Q[idx] = Qz[acc]
        self.R[idx] = Rz[acc]
        self.hld[idx] = hldz[acc]
        if self.res is not None:
            self.res[idx] = resz[acc]


def _tri_solve(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.linalg.solve(R, g[..., None])[..., 0]


def _sq_norm(R: np.ndarray, v: np.ndarray) -> np.ndarray:
    Rv = np.einsum("cij,cj->ci", R, v)
    return np.sum(Rv * Rv, axis=-1)


def _check_john(res, cfg: WalkConfig) -> None:
    if res is not None and np.any(res > cfg.john_tol):
        raise NoConvergence(f"John weights did not converge (residual {np.max(res):.3g})")


class Ensemble:
    """Many independent chains advanced in lockstep.

    Chains are split into fixed-size chunks; ``threads`` only changes how
    chunks are scheduled, never how they are computed, so results are
    identical for any thread count.
    """

    def __init__(self, P: Polytope, cfg: WalkConfig, X0, seed: int, threads: int = 1,
                 first_index: int = 0, chunk: int = CHUNK):
        X0 = np.array(X0, dtype=float, ndmin=2)
        rngs = [chain_rng(seed, first_index + i) for i in range(len(X0))]
        self._init(P, cfg, X0, rngs, threads, chunk)

    @classmethod
    def from_rngs(cls, P, cfg, X0, rngs, threads: int = 1, chunk: int = CHUNK):
        self = cls.__new__(cls)
        self._init(P, cfg, np.array(X0, dtype=float, ndmin=2), list(rngs), threads, chunk)
        return self

    def _init(self, P, cfg, X0, rngs, threads, chunk):
        self.P, self.cfg = P, cfg
        self.batches = [
            _Batch(P, cfg, X0[i:i + chunk], rngs[i:i + chunk]) for i in range(0, len(X0), chunk)
        ]
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 and len(self.batches) > 1 else None
        self.k = 0

    def step(self) -> None:
        if self._pool is None:
            for b in self.batches:
                b.step()
        else:
            list(self._pool.map(_Batch.step, self.batches))
        self.k += 1

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def X(self) -> np.ndarray:
        return np.concatenate([b.X for b in self.batches])

    @property
    def last_accept(self) -> np.ndarray:
        return np.concatenate([b.last_accept for b in self.batches])

    @property
    def john_residuals(self):
        if self.cfg.kind != "john":
            return None
        return np.concatenate([b.res for b in self.batches])

    def stats(self) -> list[StepStats]:
        counts = np.concatenate([b.counts for b in self.batches])
        return [StepStats(*map(int, row)) for row in counts]


# --- single-chain API ---------------------------------------------------------


def _batch_from_state(P, cfg, state: ChainState, rng) -> _Batch:
    W = state.metric.weights if cfg.kind == "john" else None
    return _Batch(P, cfg, state.x[None, :], [rng], W=None if W is None else W[None, :])


def propose(state: ChainState, P: Polytope, cfg: WalkConfig, rng) -> np.ndarray:
    """Draw ``z ~ N(x, c M_x^{-1})`` using ``m`` standard normals from ``rng``."""
    met = state.metric
    xi = rng.standard_normal(P.m)
    Ax = P.A / met.slack[:, None]
    g = Ax.T @ (np.sqrt(met.weights) * xi)
    return state.x + math.sqrt(cfg.scale(P.m, P.d)) * met.solve(g)


def log_accept_ratio(P: Polytope, cfg: WalkConfig, x, z) -> float:
    """``log(p_z(x) / p_x(z))`` for the Gaussian proposals of ``cfg``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.array_equal(x, z):
        return 0.0
    Mx = barriers.local_metric(P, x, cfg.kind, cfg.john_tol)
    Mz = barriers.local_metric(P, z, cfg.kind, cfg.john_tol)
    c = cfg.scale(P.m, P.d)
    dz = z - x
    return (Mz.half_log_det - Mx.half_log_det) - (Mz.norm_sq(dz) - Mx.norm_sq(dz)) / (2.0 * c)


def step(state: ChainState, P: Polytope, cfg: WalkConfig, rng) -> ChainState:
    """One lazy Metropolis-Hastings transition; returns a new state."""
    batch = _batch_from_state(P, cfg, state, rng)
    batch.step()
    lazy, infeasible, reject, accept = (int(v) for v in batch.counts[0])
    st = state.stats
    stats = StepStats(st.lazy + lazy, st.infeasible + infeasible, st.mh_reject + reject, st.accept + accept)
    if not accept:
        return replace(state, stats=stats)
    x = batch.X[0].copy()
    s = P.b - P.A @ x
    w = batch.W[0].copy()
    M = barriers._gram(P.A / s[:, None], w)
    metric = LocalMetric(cfg.kind, x, M, batch.R[0].T.copy(), float(batch.hld[0]), w, s)
    res = None if batch.res is None else float(batch.res[0])
    return ChainState(x, metric, stats, res)


@dataclass
class Trajectory:
    steps: np.ndarray
    points: np.ndarray
    accepted: np.ndarray
    stats: StepStats
    john_residuals: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def write_csv(self, path) -> None:
        d = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "accepted"] + [f"x_{j + 1}" for j in range(d)])
            for k, a, x in zip(self.steps, self.accepted, self.points):
                w.writerow([int(k), int(a)] + ["%.17g" % (v + 0.0) for v in x])

    def write_stats(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.stats.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def run_chain(P: Polytope, cfg: WalkConfig, x0, k: int, seed: int, thin: int = 1,
              chain_index: int = 0) -> Trajectory:
    """Run ``k`` steps from ``x0`` recording step 0 and every ``thin``-th state."""
    if k < 0 or thin < 1:
        raise BadParams("need k >= 0 and thin >= 1")
    x0 = np.asarray(x0, dtype=float)
    batch = _Batch(P, cfg, x0[None, :], [chain_rng(seed, chain_index)])
    n_rec = k // thin + 1
    steps = np.arange(n_rec) * thin
    pts = np.empty((n_rec, P.d))
    acc = np.zeros(n_rec, dtype=bool)
    res = np.empty(n_rec) if cfg.kind == "john" else None
    pts[0] = batch.X[0]
    if res is not None:
        res[0] = batch.res[0]
    for t in range(1, k + 1):
        batch.step()
        if t % thin == 0:
            j = t // thin
            pts[j] = batch.X[0]
            acc[j] = batch.last_accept[0]
            if res is not None:
                res[j] = batch.res[0]
    stats = StepStats(*map(int, batch.counts[0]))
    return Trajectory(steps, pts, acc, stats, res)


def hybrid_dikin_start(P: Polytope, target_cfg: WalkConfig, x0, rng, dikin_r: float = 0.5,
                       max_steps: int = 1_000_000) -> tuple[ChainState, int]:
    """Run the Dikin walk from ``x0`` until its first move, then hand over.

    Returns the target-kind state at the first new point and the number of
    Dikin steps taken.
    """
    dcfg = WalkConfig("dikin", dikin_r, lazy_prob=target_cfg.lazy_prob)
    x0 = np.asarray(x0, dtype=float)
    batch = _Batch(P, dcfg, x0[None, :], [rng])
    for k1 in range(1, max_steps + 1):
        batch.step()
        if batch.last_accept[0]:
            return init_state(P, target_cfg, batch.X[0].copy()), k1
    raise NoMove(f"Dikin walk did not move in {max_steps} steps; radius {dikin_r} too large?")


@dataclass(frozen=True)
class TuneResult:
    r: float
    acceptance: float
    converged: bool


def measure_acceptance(P: Polytope, cfg: WalkConfig, x0, steps: int, seed: int) -> float:
    return run_chain(P, cfg, x0, steps, seed).stats.acceptance


def tune_radius(P: Polytope, cfg: WalkConfig, x0, target_accept: float = 0.5, seed: int = 0,
                steps: int = 2000, iters: int = 20, tol: float = 0.05,
                r_min: float = 1e-4, r_max: float = 1.0, r_limit: float = 1e3) -> TuneResult:
    """Log-scale bisection on r so that proposal acceptance hits the target.

    Acceptance falls as r grows. Each probe runs ``steps`` steps from ``x0``.
    The search starts on ``[r_min, r_max]``; if acceptance at ``r_max`` is
    still above the target the upper end grows by 4x up to ``r_limit``.
    A target within ``tol`` of 0 or 1 is met by a whole range of radii, so the
    result is flagged unconverged.
    """
    if not 0.0 < target_accept < 1.0:
        raise BadParams("target_accept must lie in (0, 1)")
    if not 0 < r_min < r_max <= r_limit:
        raise BadParams("need 0 < r_min < r_max <= r_limit")
    degenerate = target_accept + tol >= 1.0 or target_accept - tol <= 0.0
    probe_seeds = iter(np.random.SeedSequence([int(seed), 0x7E5E]).generate_state(iters + 64))
    best = None

    def probe(r):
        nonlocal best
        a = measure_acceptance(P, replace(cfg, r=float(r)), x0, steps, int(next(probe_seeds)))
        if best is None or abs(a - target_accept) < abs(best.acceptance - target_accept):
            best = TuneResult(float(r), a, False)
        return a

    def hit(a):
        return abs(a - target_accept) <= tol and not degenerate

    lo = r_min
    a = probe(r_max)
    while a > target_accept + tol and r_max < r_limit:
        lo, r_max = r_max, min(4.0 * r_max, r_limit)
        a = probe(r_max)
    if hit(a):
        return TuneResult(r_max, a, True)
    if a > target_accept:
        return best
    lo, hi = math.log(lo), math.log(r_max)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        a = probe(math.exp(mid))
        if hit(a):
            return TuneResult(math.exp(mid), a, True)
        if a > target_accept:
            lo = mid
        else:
            hi = mid
    return best


def run_ensemble(P: Polytope, cfg: WalkConfig, X0, k: int, seed: int, thin: int = 1,
                 threads: int = 1) -> list[Trajectory]:
    """Independent chains from the rows of ``X0``; chain i uses stream i."""
    if k < 0 or thin < 1:
        raise BadParams("need k >= 0 and thin >= 1")
    X0 = np.array(X0, dtype=float, ndmin=2)
    n_rec = k // thin + 1
    pts = np.empty((n_rec, len(X0), P.d))
    acc = np.zeros((n_rec, len(X0)), dtype=bool)
    john = cfg.kind == "john"
    res = np.empty((n_rec, len(X0))) if john else None
    with Ensemble(P, cfg, X0, seed, threads=threads) as ens:
        pts[0] = ens.X
        if john:
            res[0] = ens.john_residuals
        for t in range(1, k + 1):
            ens.step()
            if t % thin == 0:
                j = t // thin
                pts[j] = ens.X
                acc[j] = ens.last_accept
                if john:
                    res[j] = ens.john_residuals
        stats = ens.stats()
    steps = np.arange(n_rec) * thin
    return [
        Trajectory(steps, pts[:, i].copy(), acc[:, i].copy(), stats[i], None if res is None else res[:, i].copy())
        for i in range(len(X0))
    ]
