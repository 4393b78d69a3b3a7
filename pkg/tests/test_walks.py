import json

import numpy as np
import pytest
from scipy import stats
from scipy.stats import multivariate_normal

from polywalk import barriers as br
from polywalk import polytope as pt
from polywalk import walks as wk
from polywalk.errors import BadParams, NoMove


def test_covariance_scales():
    assert wk.covariance_scale("dikin", 2.0, 8, 4) == pytest.approx(1.0)
    assert wk.covariance_scale("vaidya", 2.0, 16, 4) == pytest.approx(0.5)
    # kappa = log2(2*16/2) = 4
    assert wk.covariance_scale("john", 2.0, 16, 2) == pytest.approx(4.0 / (2**1.5 * 256))
    with pytest.raises(BadParams):
        wk.covariance_scale("ball", 1.0, 4, 2)


@pytest.mark.parametrize(
    "kwargs",
    [dict(kind="ball", r=1.0), dict(kind="dikin", r=0.0), dict(kind="dikin", r=1.0, lazy_prob=1.5)],
)
def test_config_validation(kwargs):
    with pytest.raises(BadParams):
        wk.WalkConfig(**kwargs)


def test_scale_override():
    assert wk.WalkConfig("dikin", 1.0, scale_override=0.3).scale(10, 2) == 0.3


def test_propose_regression(square):
    cfg = wk.WalkConfig("vaidya", 0.5)
    state = wk.init_state(square, cfg, [0.2, -0.3])
    z = wk.propose(state, square, cfg, wk.chain_rng(7, 0))
    np.testing.assert_allclose(z, [0.22538836, -0.13990516], atol=1e-8)


@pytest.mark.parametrize("kind", br.KINDS)
def test_proposal_moments(square, kind):
    cfg = wk.WalkConfig(kind, 0.8)
    x = np.array([0.4, -0.5])
    state = wk.init_state(square, cfg, x)
    rng = np.random.default_rng(3)
    n = 100_000
    Z = np.array([wk.propose(state, square, cfg, rng) for _ in range(n)])
    cov = cfg.scale(square.m, square.d) * np.linalg.inv(state.metric.M)
    se_mean = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(Z.mean(axis=0) - x) <= 3 * se_mean)
    emp = np.cov(Z.T)
    # standard error of a sample covariance entry for Gaussian data
    se_cov = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
    assert np.all(np.abs(emp - cov) <= 3 * se_cov)


@pytest.mark.parametrize("kind", br.KINDS)
def test_log_accept_ratio_against_densities(square, kind):
    cfg = wk.WalkConfig(kind, 0.7)
    x, z = np.array([0.1, 0.6]), np.array([-0.3, 0.2])
    c = cfg.scale(square.m, square.d)
    Mx = br.local_metric(square, x, kind).M
    Mz = br.local_metric(square, z, kind).M
    expected = multivariate_normal(z, c * np.linalg.inv(Mz)).logpdf(x) - multivariate_normal(
        x, c * np.linalg.inv(Mx)
    ).logpdf(z)
    got = wk.log_accept_ratio(square, cfg, x, z)
    assert got == pytest.approx(expected, rel=1e-10, abs=1e-12)
    assert wk.log_accept_ratio(square, cfg, z, x) == pytest.approx(-got, rel=1e-12, abs=1e-14)
    assert wk.log_accept_ratio(square, cfg, x, x) == 0.0


def test_fully_lazy_chain_never_moves(square):
    tr = wk.run_chain(square, wk.WalkConfig("dikin", 1.0, lazy_prob=1.0), [0.3, 0.3], 200, 1)
    assert tr.stats.lazy == 200
    assert np.all(tr.points == [0.3, 0.3])
    assert np.isnan(tr.stats.acceptance)


class _HugeNormals:
    """Stand-in generator: never lazy, proposals far outside the set."""

    def random(self):
        return 0.99

    def standard_normal(self, n):
        return np.full(n, 1e6)


def test_infeasible_proposals_are_rejected(square):
    cfg = wk.WalkConfig("vaidya", 1.0)
    state = wk.init_state(square, cfg, [0.2, 0.1])
    rng = _HugeNormals()
    for _ in range(5):
        state = wk.step(state, square, cfg, rng)
    assert state.stats.infeasible == 5
    np.testing.assert_array_equal(state.x, [0.2, 0.1])


def test_trajectory_regression(square):
    tr = wk.run_chain(square, wk.WalkConfig("vaidya", 0.5), [0.0, 0.0], 100, 2024)
    assert tr.stats.as_dict() == {"steps": 100, "lazy": 55, "infeasible": 0, "mh_reject": 10, "accept": 35}
    np.testing.assert_allclose(tr.points[-1], [0.5681320102787849, -0.24371227661021536], atol=1e-12)


def test_step_matches_run_chain(square):
    cfg = wk.WalkConfig("john", 0.5)
    tr = wk.run_chain(square, cfg, [0.1, 0.2], 40, 9)
    state, rng = wk.init_state(square, cfg, [0.1, 0.2]), wk.chain_rng(9, 0)
    for k in range(40):
        state = wk.step(state, square, cfg, rng)
        np.testing.assert_allclose(state.x, tr.points[k + 1], atol=1e-13)
    assert state.stats == tr.stats
    assert state.john_residual <= cfg.john_tol


def test_zero_steps_and_thinning(square):
    cfg = wk.WalkConfig("dikin", 0.5)
    tr = wk.run_chain(square, cfg, [0.1, 0.2], 0, 1)
    assert len(tr) == 1 and tr.stats.steps == 0
    full = wk.run_chain(square, cfg, [0.1, 0.2], 30, 4)
    thin = wk.run_chain(square, cfg, [0.1, 0.2], 30, 4, thin=3)
    np.testing.assert_array_equal(thin.steps, np.arange(0, 31, 3))
    np.testing.assert_array_equal(thin.points, full.points[::3])
    with pytest.raises(BadParams):
        wk.run_chain(square, cfg, [0.1, 0.2], 5, 1, thin=0)


def test_chains_are_deterministic_and_stay_inside(square):
    cfg = wk.WalkConfig("vaidya", 1.4)
    a = wk.run_chain(square, cfg, [0.0, 0.0], 3000, 12)
    b = wk.run_chain(square, cfg, [0.0, 0.0], 3000, 12)
    np.testing.assert_array_equal(a.points, b.points)
    assert np.all(np.abs(a.points) < 1)


@pytest.mark.parametrize("kind,lo,hi", [("dikin", 0.7, 0.82), ("vaidya", 0.73, 0.85), ("john", 0.9, 0.97)])
def test_acceptance_band(square, kind, lo, hi):
    tr = wk.run_chain(square, wk.WalkConfig(kind, 0.5), [0.0, 0.0], 10_000, 5)
    assert lo <= tr.stats.acceptance <= hi
    assert tr.stats.lazy == pytest.approx(5000, abs=4 * 50)


def test_hybrid_start_moves_quickly(square):
    rng = np.random.default_rng(0)
    cfg = wk.WalkConfig("john", 1.0)
    k1 = []
    for _ in range(200):
        state, k = wk.hybrid_dikin_start(square, cfg, [0.0, 0.0], rng)
        assert state.metric.kind == "john" and not np.array_equal(state.x, [0.0, 0.0])
        k1.append(k)
    assert np.mean(k1) < 50


def test_hybrid_start_gives_up(square):
    with pytest.raises(NoMove):
        wk.hybrid_dikin_start(square, wk.WalkConfig("vaidya", 1.0), [0.0, 0.0], np.random.default_rng(0),
                              dikin_r=1e4, max_steps=20)


def test_acceptance_falls_with_radius(square):
    acc = [wk.measure_acceptance(square, wk.WalkConfig("vaidya", r), [0.0, 0.0], 2000, 1) for r in (0.1, 1.0, 10.0)]
    assert acc[0] > acc[1] > acc[2]


@pytest.mark.parametrize("kind", ["dikin", "vaidya"])
def test_tune_radius_hits_target_on_holdout(square, kind):
    cfg = wk.WalkConfig(kind, 1.0)
    res = wk.tune_radius(square, cfg, [0.0, 0.0], target_accept=0.5, seed=3)
    assert res.converged
    holdout = wk.measure_acceptance(square, wk.WalkConfig(kind, res.r), [0.0, 0.0], 2000, 999)
    assert abs(holdout - 0.5) <= 0.1


def test_tune_radius_degenerate_target(square):
    res = wk.tune_radius(square, wk.WalkConfig("dikin", 1.0), [0.0, 0.0], target_accept=0.999, seed=0)
    assert not res.converged
    with pytest.raises(BadParams):
        wk.tune_radius(square, wk.WalkConfig("dikin", 1.0), [0.0, 0.0], target_accept=1.0)


def test_uniform_is_stationary(square):
    # start 2000 chains at independent uniform points; the law must stay uniform
    rng = np.random.default_rng(17)
    X0 = rng.uniform(-1, 1, (2000, 2))
    trs = wk.run_ensemble(square, wk.WalkConfig("vaidya", 1.4), X0, 40, seed=17)
    X = np.array([t.points[-1] for t in trs])
    for j in range(2):
        assert stats.kstest(X[:, j], stats.uniform(-1, 2).cdf).pvalue > 1e-3


def test_ensemble_independent_of_threads_and_chunking():
    P = pt.hypercube_repeated(3, 24)
    X0 = np.zeros((70, 3))
    cfg = wk.WalkConfig("john", 1.0)
    one = wk.run_ensemble(P, cfg, X0, 15, seed=4, threads=1)
    many = wk.run_ensemble(P, cfg, X0, 15, seed=4, threads=8)
    for a, b in zip(one, many):
        assert a.points.tobytes() == b.points.tobytes()
        assert a.stats == b.stats
    # chain i of an ensemble equals a lone chain on stream i
    lone = wk.run_chain(P, cfg, X0[40], 15, 4, chain_index=40)
    np.testing.assert_allclose(lone.points, one[40].points, atol=1e-13)
    assert np.all(one[40].john_residuals <= cfg.john_tol)


def test_trajectory_files(tmp_path, square):
    tr = wk.run_chain(square, wk.WalkConfig("dikin", 0.5), [0.0, -0.0], 3, 1)
    tr.write_csv(tmp_path / "t.csv")
    tr.write_stats(tmp_path / "t.json")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,accepted,x_1,x_2"
    assert lines[1] == "0,0,0,0"
    assert len(lines) == 5
    back = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(back[:, 2:], tr.points)
    assert json.loads((tmp_path / "t.json").read_text()) == tr.stats.as_dict()
