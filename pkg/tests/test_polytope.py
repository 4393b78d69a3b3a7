import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from polywalk import polytope as pt
from polywalk.errors import (
    BadParams,
    DegeneratePair,
    DimensionMismatch,
    EmptyInterior,
    RankDeficient,
    UnboundedDirection,
)
from polywalk.invariants import random_instance


# --- construction ---------------------------------------------------------------


def test_square_witness_and_center(square):
    assert pt.contains_interior(square, square.witness)
    np.testing.assert_allclose(square.witness, [0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(pt.analytic_center(square), [0.0, 0.0], atol=1e-12)
    assert (square.m, square.d) == (4, 2)


def test_interval_witness(interval):
    np.testing.assert_allclose(interval.witness, [0.0], atol=1e-12)


def test_empty_interior_with_duplicated_row():
    with pytest.raises(EmptyInterior):
        pt.new_polytope([[1.0], [1.0], [-1.0]], [0.0, 0.0, -1.0])


def test_flat_polytope_has_empty_interior():
    # x <= 0 and -x <= 0 pin x to a single value
    with pytest.raises(EmptyInterior):
        pt.new_polytope([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], [0.0, 0.0, 1.0, 1.0])


def test_rank_deficient():
    with pytest.raises(RankDeficient):
        pt.new_polytope([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0]], [1.0, 1.0, 1.0])


@pytest.mark.parametrize(
    "A, b",
    [([[1.0, 0.0]], [1.0, 2.0]), ([1.0, 2.0], [1.0, 2.0]), (np.zeros((0, 2)), np.zeros(0))],
)
def test_dimension_mismatch(A, b):
    with pytest.raises(DimensionMismatch):
        pt.new_polytope(A, b)


def test_non_finite_rejected():
    with pytest.raises(BadParams):
        pt.new_polytope([[1.0], [-np.inf]], [1.0, 1.0])


def test_polytope_arrays_are_read_only(square):
    with pytest.raises(ValueError):
        square.A[0, 0] = 5.0


# --- slackness and membership ---------------------------------------------------


def test_slackness_examples(square, interval):
    np.testing.assert_array_equal(pt.slackness(square, [0.0, 0.0]), [1, 1, 1, 1])
    np.testing.assert_array_equal(pt.slackness(square, [0.5, 0.0]), [0.5, 1.0, 1.5, 1.0])
    s = pt.slackness(interval, [1.0])
    np.testing.assert_array_equal(s, [0.0, 2.0])
    assert not pt.contains_interior(interval, [1.0])


def test_slackness_batched(square):
    X = np.array([[0.0, 0.0], [0.5, 0.0]])
    np.testing.assert_array_equal(pt.slackness(square, X)[1], [0.5, 1.0, 1.5, 1.0])


@pytest.mark.parametrize("x, inside", [((0, 0), True), ((1, 0), False), ((2, 0), False)])
def test_contains_interior(square, x, inside):
    assert pt.contains_interior(square, np.array(x, float)) is inside


# --- chords and cross-ratio -----------------------------------------------------


def test_chord_examples(square, interval):
    assert pt.chord_endpoints(square, [0.0, 0.0], [1.0, 0.0]) == (-1.0, 1.0)
    assert pt.chord_endpoints(square, [0.5, 0.0], [1.0, 0.0]) == (-1.5, 0.5)
    assert pt.chord_endpoints(interval, [0.0], [1.0]) == (-1.0, 1.0)


def test_chord_unbounded_direction():
    P = pt.new_polytope([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], [1.0, 1.0, 1.0])
    with pytest.raises(UnboundedDirection):
        pt.chord_endpoints(P, [0.0, 0.0], [1.0, 0.0])


def test_chord_zero_direction(square):
    with pytest.raises(BadParams):
        pt.chord_endpoints(square, [0.0, 0.0], [0.0, 0.0])


def _cross_ratio_by_definition(P, x, y):
    # endpoints from a fine bisection on membership, independent of chord_endpoints
    x, y = np.asarray(x, float), np.asarray(y, float)
    u = y - x

    def edge(sign):
        lo, hi = 0.0, 1.0
        while pt.contains_interior(P, x + sign * hi * u):
            hi *= 2
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if pt.contains_interior(P, x + sign * mid * u):
                lo = mid
            else:
                hi = mid
        return x + sign * lo * u

    ex, ey = edge(-1.0), edge(1.0)
    n = np.linalg.norm
    return n(ex - ey) * n(x - y) / (n(ex - x) * n(ey - y))


def test_cross_ratio_interval(interval):
    assert pt.cross_ratio(interval, [0.0], [0.5]) == pytest.approx(2.0, rel=1e-14)


def test_cross_ratio_square_two_ways(square):
    a = pt.cross_ratio(square, [0.0, 0.0], [0.5, 0.0])
    b = _cross_ratio_by_definition(square, [0.0, 0.0], [0.5, 0.0])
    assert a == pytest.approx(2.0, rel=1e-12)
    assert a == pytest.approx(b, rel=1e-12)


def test_cross_ratio_vanishes_as_points_merge(square):
    x = np.array([0.2, -0.3])
    vals = [pt.cross_ratio(square, x, x + t * np.array([0.3, 0.4])) for t in (1.0, 0.1, 0.01, 1e-4, 1e-8)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-7


def test_cross_ratio_degenerate(square):
    with pytest.raises(DegeneratePair):
        pt.cross_ratio(square, [0.1, 0.1], [0.1, 0.1])


@st.composite
def instance_pairs(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    inst = random_instance(rng)
    P = inst.P
    u = rng.standard_normal(P.d)
    tm, tp = pt.chord_endpoints(P, inst.x, u)
    y = inst.x + rng.uniform(0.05, 0.95) * tp * u
    return P, inst.x, y, rng


@given(instance_pairs())
def test_cross_ratio_properties(case):
    P, x, y, _ = case
    a, b = pt.cross_ratio(P, x, y), pt.cross_ratio(P, y, x)
    assert a == pytest.approx(b, rel=1e-9)
    assert a >= pt.cross_ratio_lower_bound(P, x, y) * (1 - 1e-10)


@given(instance_pairs())
def test_chord_endpoints_hit_the_boundary(case):
    P, x, y, _ = case
    u = y - x
    tm, tp = pt.chord_endpoints(P, x, u)
    assert tm < 0 < tp
    for t in (tm, tp):
        s = pt.slackness(P, x + t * u)
        scale = np.abs(P.b) + np.abs(P.A @ (x + t * u))
        assert np.min(s / scale) >= -1e-10
        assert np.sum(np.abs(s / scale) <= 1e-10) >= 1


@given(instance_pairs())
def test_row_scaling_invariance(case):
    P, x, y, rng = case
    # the cross-ratio is ill-conditioned next to a facet; keep x in the bulk
    assume(np.min(pt.slackness(P, x) / (np.abs(P.b) + np.abs(P.A @ x))) > 1e-3)
    c = np.exp(rng.uniform(-3, 3, P.m))
    Q = pt.new_polytope(P.A * c[:, None], P.b * c)
    u = y - x
    assert pt.contains_interior(Q, y) == pt.contains_interior(P, y)
    np.testing.assert_allclose(pt.chord_endpoints(Q, x, u), pt.chord_endpoints(P, x, u), rtol=1e-10)
    assert pt.cross_ratio(Q, x, y) == pytest.approx(pt.cross_ratio(P, x, y), rel=1e-10)
    np.testing.assert_allclose(pt.analytic_center(Q), pt.analytic_center(P), rtol=1e-10, atol=1e-10)


# --- analytic center ------------------------------------------------------------


def test_analytic_center_weighted_square():
    # bottom and left rows three times, top and right once
    A = [[1, 0], [0, 1]] + [[-1, 0], [0, -1]] * 3
    P = pt.new_polytope(np.array(A, float), np.ones(8))
    c = pt.analytic_center(P)
    # grid oracle for F(x) = -sum log s_i
    g = np.linspace(-0.999, 0.999, 2001)
    X, Y = np.meshgrid(g, g, indexing="ij")
    F = -(np.log(1 - X) + np.log(1 - Y) + 3 * np.log(1 + X) + 3 * np.log(1 + Y))
    i, j = np.unravel_index(np.argmin(F), F.shape)
    assert abs(c[0] - X[i, j]) <= 1e-3 and abs(c[1] - Y[i, j]) <= 1e-3
    # stationarity gives 3/(1+x) = 1/(1-x), so x = 1/2
    np.testing.assert_allclose(c, [0.5, 0.5], atol=1e-9)


def test_analytic_center_shifted_interval():
    P = pt.new_polytope([[-1.0], [1.0]], [0.0, 2.0])
    np.testing.assert_allclose(pt.analytic_center(P), [1.0], atol=1e-10)


def test_analytic_center_newton_decrement():
    rng = np.random.default_rng(3)
    P = random_instance(rng, d=4).P
    c = pt.analytic_center(P)
    s = pt.slackness(P, c)
    g = (P.A / s[:, None]).sum(axis=0)
    H = (P.A / s[:, None]).T @ (P.A / s[:, None])
    assert np.sqrt(g @ np.linalg.solve(H, g)) <= 1e-8


# --- families -------------------------------------------------------------------


def test_hypercube_repeated():
    P = pt.hypercube_repeated(2, 8)
    base = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], float)
    np.testing.assert_array_equal(P.A, np.vstack([base, base]))
    np.testing.assert_allclose(pt.analytic_center(P), [0, 0], atol=1e-12)


def test_random_symmetric_contains_antidiagonal():
    P = pt.random_symmetric_2d(64, seed=7)
    for t in np.linspace(-0.9999, 0.9999, 10):
        assert pt.contains_interior(P, [t, -t])
    assert np.all(P.b == 1.0)
    assert np.all(np.abs(P.A) <= 1.0)
    # each row has both entries of one sign
    assert np.all(P.A[:, 0] * P.A[:, 1] >= 0)


def test_random_symmetric_is_seeded():
    a, b = pt.random_symmetric_2d(32, seed=3), pt.random_symmetric_2d(32, seed=3)
    np.testing.assert_array_equal(a.A, b.A)


def test_regular_polygon_four_is_rotated_square():
    P = pt.regular_polygon(4)
    assert pt.contains_interior(P, [0.0, 0.0])
    for v in ([1, 0], [0, 1], [-1, 0], [0, -1]):
        s = pt.slackness(P, np.array(v, float))
        assert np.min(np.abs(s)) < 1e-12 and np.min(s) > -1e-12
    np.testing.assert_allclose(np.linalg.norm(P.A, axis=1), 1.0)


@pytest.mark.parametrize(
    "family, params",
    [
        ("hypercube_repeated", {"d": 2, "m": 6}),
        ("random_symmetric_2d", {"m": 7}),
        ("regular_polygon", {"m": 2}),
        ("nope", {}),
        ("regular_polygon", {}),
    ],
)
def test_generate_bad_params(family, params):
    with pytest.raises(BadParams):
        pt.generate(family, params, seed=0)


def test_generate_dispatch():
    P = pt.generate("regular_polygon", {"m": 6})
    assert (P.m, P.d) == (6, 2)


# --- serialisation --------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
def test_text_round_trip_is_bit_exact(seed):
    P = random_instance(np.random.default_rng(seed)).P
    Q = pt.loads(pt.dumps(P))
    assert np.array_equal(P.A, Q.A) and np.array_equal(P.b, Q.b)


def test_file_round_trip(tmp_path, square):
    path = tmp_path / "sq.txt"
    pt.save(square, path)
    assert path.read_text().splitlines()[0] == "4 2"
    Q = pt.load(path)
    assert np.array_equal(Q.A, square.A)


def test_loads_rejects_bad_header():
    with pytest.raises(DimensionMismatch):
        pt.loads("3 2\n1 0 1\n0 1 1\n")
