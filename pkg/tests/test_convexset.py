import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import Point as SPoint
from shapely.geometry import Polygon

from sdinclusion.convexset import (
    Ball,
    DimensionError,
    Direction,
    Hull,
    MinkowskiSum,
    Point,
    QuadratureSpec,
    Scaled,
    Translated,
    distance_to_point,
    hausdorff_distance,
    steiner_point,
    support_point,
    support_value,
    support_values,
)

TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def net_hausdorff(K1, K2, m=20000):
    """Hausdorff distance of planar convex bodies as the sup of |h1 - h2|,
    from a direction net refined by bounded scalar maximization."""
    from scipy.optimize import minimize_scalar

    def gap(th):
        U = np.column_stack([np.cos(th), np.sin(th)])
        return np.abs(support_values(K1, U) - support_values(K2, U))

    th = np.linspace(0, 2 * np.pi, m, endpoint=False)
    vals = gap(th)
    best = float(vals.max())
    step = th[1]
    for i in np.argsort(vals)[-8:]:
        res = minimize_scalar(lambda t: -gap(np.array([t]))[0], method="bounded",
                              bounds=(th[i] - step, th[i] + step),
                              options={"xatol": 1e-12})
        best = max(best, -res.fun)
    return best


def exterior_angle_steiner(V):
    """Planar polygon Steiner point: vertices weighted by exterior angle / 2 pi."""
    from scipy.spatial import ConvexHull
    V = V[ConvexHull(V).vertices]
    m = len(V)
    s = np.zeros(2)
    for i in range(m):
        a, b = V[i - 1] - V[i], V[(i + 1) % m] - V[i]
        interior = math.acos(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        s += V[i] * (math.pi - interior) / (2 * math.pi)
    return s


def gaussian_steiner(K, n=400_000, seed=0):
    g = np.random.default_rng(seed).standard_normal((n, K.dim))
    return (support_values(K, g)[:, None] * g).mean(axis=0)


def random_polygon(rng, k=None):
    k = k or int(rng.integers(3, 9))
    return Hull(rng.normal(size=(k, 2)) + rng.normal(size=2))


bodies2d = st.builds(
    lambda seed, kind: _body(np.random.default_rng(seed), kind),
    st.integers(0, 10 ** 6), st.sampled_from(["hull", "ball", "sum", "point", "scaled"]))


def _body(rng, kind):
    if kind == "hull":
        return random_polygon(rng)
    if kind == "ball":
        return Ball(rng.normal(size=2), float(rng.uniform(0, 2)))
    if kind == "sum":
        return MinkowskiSum(random_polygon(rng), Ball(np.zeros(2), float(rng.uniform(0, 1))))
    if kind == "scaled":
        return Translated(rng.normal(size=2), Scaled(float(rng.uniform(0, 3)), random_polygon(rng)))
    return Point(rng.normal(size=2))


# support functions


def test_support_examples():
    assert support_value(Ball([0, 0], 2), [1, 0]) == pytest.approx(4 / 2)
    assert support_value(Hull(SQUARE), Direction.of([1, 1])) == pytest.approx(math.sqrt(2))
    assert support_value(Ball([3, 0], 1), [1, 0]) == pytest.approx(4.0)
    # tie on a face goes to the lexicographically smallest vertex
    np.testing.assert_array_equal(support_point(Hull(SQUARE), [-1, 0]), [0, 0])


def test_direction_must_be_unit():
    with pytest.raises(ValueError):
        Direction(np.array([1.0, 1.0]))
    assert Direction.of([3, 4]).u == pytest.approx([0.6, 0.8])


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        support_value(Hull(TRIANGLE), [1, 0, 0])
    with pytest.raises(DimensionError):
        MinkowskiSum(Point([0, 0]), Point([0, 0, 0]))


@given(bodies2d, bodies2d, st.floats(0, 2 * np.pi))
def test_support_is_additive_and_homogeneous(K1, K2, th):
    u = np.array([np.cos(th), np.sin(th)])
    assert support_value(K1 + K2, u) == pytest.approx(
        support_value(K1, u) + support_value(K2, u), abs=1e-12)
    assert support_value(Scaled(2.5, K1), u) == pytest.approx(2.5 * support_value(K1, u))


@given(bodies2d, st.floats(0, 2 * np.pi))
def test_support_point_attains_support_value(K, th):
    u = np.array([np.cos(th), np.sin(th)])
    x = support_point(K, u)
    assert float(x @ u) == pytest.approx(support_value(K, u), abs=1e-12)
    assert distance_to_point(K, x)[0] <= 1e-7


# distance to a point


def test_distance_examples():
    d, w = distance_to_point(Hull(SQUARE), [3, 0.0])
    assert d == pytest.approx(2.0) and w == pytest.approx([1, 0])
    assert distance_to_point(Hull(SQUARE), [0.5, 0.5])[0] == 0
    d, w = distance_to_point(Ball([0, 0], 1), [2, 0])
    assert d == pytest.approx(1.0) and w == pytest.approx([1, 0])


def test_distance_matches_shapely(rng):
    for _ in range(100):
        V = rng.normal(size=(int(rng.integers(3, 10)), 2))
        x = rng.normal(size=2) * 3
        d, w = distance_to_point(Hull(V), x, tol=1e-10)
        poly = Polygon(V).convex_hull
        assert d == pytest.approx(poly.distance(SPoint(x)), abs=1e-8)
        assert np.linalg.norm(w - x) == pytest.approx(d, abs=1e-8)


def test_distance_3d_against_projection(rng):
    from scipy.optimize import minimize
    for _ in range(10):
        V = rng.normal(size=(8, 3))
        x = rng.normal(size=3) * 2
        res = minimize(lambda lam: np.sum((np.exp(lam) / np.exp(lam).sum() @ V - x) ** 2),
                       np.zeros(8), method="BFGS", options={"gtol": 1e-12})
        ref = math.sqrt(res.fun)
        d, _ = distance_to_point(Hull(V), x, tol=1e-10)
        assert d <= ref + 1e-9
        assert d == pytest.approx(ref, abs=1e-4)


# Hausdorff distance


def test_hausdorff_examples():
    assert hausdorff_distance(Point([0, 0]), Point([1, 0])) == pytest.approx(1.0)
    assert hausdorff_distance(Hull(TRIANGLE), Hull(SQUARE)) == pytest.approx(math.sqrt(0.5))
    # farthest ball point from the square lies on an axis
    assert hausdorff_distance(Ball([0, 0], 2), Hull(SQUARE - 0.5)) == pytest.approx(1.5)


def test_hausdorff_matches_support_net(rng):
    for _ in range(60):
        K1 = _body(rng, str(rng.choice(["hull", "ball", "sum", "scaled"])))
        K2 = _body(rng, str(rng.choice(["hull", "ball", "sum", "scaled"])))
        assert hausdorff_distance(K1, K2) == pytest.approx(net_hausdorff(K1, K2), abs=1e-6)


@given(bodies2d, bodies2d, bodies2d)
def test_hausdorff_metric_axioms(A, B, C):
    tol = 1e-6
    ab, ba = hausdorff_distance(A, B, tol), hausdorff_distance(B, A, tol)
    assert ab == ba
    assert hausdorff_distance(A, A, tol) <= tol
    assert ab <= hausdorff_distance(A, C, tol) + hausdorff_distance(C, B, tol) + 3 * tol


@given(bodies2d, st.floats(0.0, 3.0))
def test_hausdorff_of_ball_inflation(K, r):
    assert hausdorff_distance(K, K + Ball([0, 0], r)) == pytest.approx(r, abs=1e-9)


def test_hausdorff_in_three_dimensions(rng):
    g = rng.standard_normal((200_000, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    for _ in range(5):
        K1, K2 = Hull(rng.normal(size=(6, 3))), Hull(rng.normal(size=(7, 3)))
        net = np.max(np.abs(support_values(K1, g) - support_values(K2, g)))
        h = hausdorff_distance(K1, K2)
        assert net <= h + 1e-9
        assert h == pytest.approx(net, rel=1e-2)


# Steiner point


def test_steiner_examples():
    assert steiner_point(Hull(TRIANGLE)) == pytest.approx([0.375, 0.375], abs=1e-12)
    assert steiner_point(Hull(SQUARE)) == pytest.approx([0.5, 0.5], abs=1e-12)
    assert steiner_point(Ball([1, 2], 3)) == pytest.approx([1, 2])
    assert steiner_point(Hull([[0, 0], [2, 0]])) == pytest.approx([1, 0])


def test_steiner_against_exterior_angles(rng):
    assert exterior_angle_steiner(TRIANGLE) == pytest.approx([0.375, 0.375], abs=1e-12)
    for _ in range(50):
        V = rng.normal(size=(int(rng.integers(3, 12)), 2))
        assert steiner_point(Hull(V)) == pytest.approx(exterior_angle_steiner(V), abs=1e-10)


@pytest.mark.parametrize("d", [3, 4])
def test_steiner_against_gaussian_average(d, rng):
    K = Hull(rng.normal(size=(9, d)))
    s = steiner_point(K, QuadratureSpec(nodes=8192))
    assert s == pytest.approx(gaussian_steiner(K), abs=1.5e-2)


def test_steiner_of_simplex_in_3d_is_symmetric():
    V = np.vstack([np.zeros(3), np.eye(3)])
    s = steiner_point(Hull(V))
    # symmetric under coordinate permutations
    assert s[0] == pytest.approx(s[1], abs=1e-3) and s[1] == pytest.approx(s[2], abs=1e-3)
    assert distance_to_point(Hull(V), s)[0] == 0


@given(bodies2d)
def test_steiner_membership(K):
    s = steiner_point(K)
    assert distance_to_point(K, s)[0] <= 1e-6


@given(bodies2d, bodies2d)
def test_steiner_is_additive_and_lipschitz(K1, K2):
    s1, s2 = steiner_point(K1), steiner_point(K2)
    assert steiner_point(K1 + K2) == pytest.approx(s1 + s2, abs=1e-9)
    # planar Lipschitz constant of the Steiner selection is 4 / pi
    assert np.linalg.norm(s1 - s2) <= 4 / math.pi * hausdorff_distance(K1, K2) + 1e-9


@given(bodies2d, st.floats(0.0, 4.0))
def test_steiner_is_affine_equivariant(K, c):
    v = np.array([1.5, -2.0])
    assert steiner_point(Translated(v, Scaled(c, K))) == pytest.approx(
        v + c * steiner_point(K), abs=1e-9)
