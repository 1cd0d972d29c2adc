import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from sdinclusion.diagnostics import (
    REPORT_HEADER,
    DiagnosticsReport,
    aldous_statistic,
    bl_distance,
    convolution_homogeneity,
    convolution_inequality_check,
    gronwall_bound,
    noncompactness_proxy,
    residual_table,
    sup_moment,
)
from sdinclusion.driver import GridError
from sdinclusion.semigroup import SemigroupOperator, evolve
from sdinclusion.tonelli import tonelli_step_ensemble

from helpers import brownian, ensemble, lipschitz_single, tube_benchmark


def constant_paths(values, nodes=33, dt=1 / 32):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return ensemble(np.repeat(values[:, None, :], nodes, axis=1), dt)


# sup moments


def test_sup_moment_constant_path():
    est, se = sup_moment(constant_paths([[3.0, 4.0]] * 5), 3)
    assert est == 125.0 and se == 0.0


def test_sup_moment_of_semigroup_orbit():
    op = SemigroupOperator.from_matrix(np.array([[0.2, 1.0], [-1.0, 0.2]]), 1.0)
    x0 = np.array([1.0, 0.5])
    t = np.arange(65) / 64
    orbit = np.stack([evolve(op, s, x0) for s in t])
    est, se = sup_moment(ensemble(orbit[None], 1 / 64), 4)
    assert est == pytest.approx(np.max(np.linalg.norm(orbit, axis=1)) ** 4, rel=1e-15)
    assert se == 0.0


def test_sup_moment_errors():
    with pytest.raises(ValueError):
        sup_moment(constant_paths([[1.0]]), 0)
    with pytest.raises(ValueError):
        sup_moment(np.zeros((0, 3, 1)), 2)


def test_sup_moment_brownian_against_finer_oracle():
    P, dt = 1000, 1 / 256
    est, se = sup_moment(brownian(P, 1.0, dt, seed=11), 4)
    # oracle: 10x paths, 10x finer grid, an independent generator
    rng = np.random.default_rng(99)
    vals = []
    for _ in range(10):
        W = np.zeros(P)
        run = np.zeros(P)
        for _ in range(2560):
            W += rng.standard_normal(P) * math.sqrt(dt / 10)
            np.maximum(run, np.abs(W), out=run)
        vals.append(run ** 4)
    vals = np.concatenate(vals)
    ref, ref_se = vals.mean(), vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(est - ref) < 3 * math.hypot(se, ref_se)


# stochastic convolution


def test_convolution_zero_integrand():
    op = SemigroupOperator.from_matrix(np.array([[-1.0]]), 1.0)
    fit = convolution_inequality_check(op, lambda t: np.zeros((1, 1)), 4, [0.25, 0.5, 1.0],
                                       200, seed=0)
    assert fit.fit_Cp == 0.0 and fit.verdict == "pass"
    assert fit.lhs == [0.0, 0.0, 0.0]


def test_convolution_brownian_constant_is_stable():
    op = SemigroupOperator.from_matrix(np.zeros((1, 1)), 1.0)
    fit = convolution_inequality_check(op, lambda t: np.ones((1, 1)), 4,
                                       [1 / 8, 1 / 4, 1 / 2, 1.0], 4000, seed=1)
    assert fit.verdict == "pass"
    # E sup|W_t|^4 / t^2 does not depend on t; Doob gives the bound (4/3)^4 * 3
    assert max(fit.ratios) / min(fit.ratios) < 1.3
    assert 1.0 < fit.fit_Cp < (4 / 3) ** 4 * 3


def test_convolution_requires_p_above_two():
    op = SemigroupOperator.from_matrix(np.zeros((1, 1)), 1.0)
    with pytest.raises(ValueError):
        convolution_inequality_check(op, lambda t: np.ones((1, 1)), 2, [1.0], 10, seed=0)


def test_convolution_homogeneity():
    op = SemigroupOperator.from_matrix(np.array([[-1.0, 0.5], [0.0, -0.5]]), 1.0)
    g = lambda t: np.array([[1.0, 0.2], [0.0, 0.5 + t]])  # noqa: E731
    assert convolution_homogeneity(op, g, 4, 1.0, 500, seed=2) == pytest.approx(1.0, rel=1e-12)


def test_convolution_sharp_drop_is_not_stable():
    # an integrand that collapses early makes LHS/RHS drift by more than 3x
    op = SemigroupOperator.from_matrix(np.zeros((1, 1)), 1.0)
    g = lambda t: np.array([[2.0 if t < 0.25 else 0.1]])  # noqa: E731
    fit = convolution_inequality_check(op, g, 4, [1 / 8, 1 / 4, 1 / 2, 1.0], 2000, seed=3)
    assert fit.verdict == "fail"


# Aldous statistic


def test_aldous_constant_paths():
    tab = aldous_statistic(constant_paths([[1.0], [2.0]]), [1 / 32, 0.25, 1.0], 0.1)
    assert set(tab.values()) == {0.0}


def test_aldous_below_dt_is_one_increment():
    X = brownian(500, 1.0, 1 / 32, seed=4)
    eta = 0.2
    tab = aldous_statistic(X, [1e-3], eta)
    inc = np.abs(np.diff(X.trajectories[..., 0], axis=1)) > eta
    assert tab[1e-3] == inc.mean(axis=0).max()


def test_aldous_gaussian_tail():
    P, dt, eta = 20000, 1 / 64, 0.5
    X = brownian(P, 1.0, dt, seed=5)
    tab = aldous_statistic(X, [1 / 64, 1 / 16, 1 / 4], eta)
    for d, est in tab.items():
        oracle = 2 * norm.sf(eta / math.sqrt(d))
        se = math.sqrt(oracle * (1 - oracle) / P)
        # a max over many start times sits above the pointwise probability
        assert oracle - 3 * se - 1e-4 <= est <= oracle + 6 * se + 1e-4
    vals = [tab[d] for d in sorted(tab)]
    assert vals == sorted(vals) and vals[0] < 0.01


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6), st.floats(0.05, 2.0))
def test_aldous_monotone_in_delta(deltas, eta):
    X = brownian(50, 1.0, 1 / 32, seed=6)
    tab = aldous_statistic(X, deltas, eta)
    vals = [tab[d] for d in sorted(tab)]
    assert vals == sorted(vals)
    assert all(0.0 <= v <= 1.0 for v in vals)


def test_aldous_rejects_bad_delta():
    with pytest.raises(ValueError):
        aldous_statistic(constant_paths([[0.0]]), [0.0], 0.1)
    with pytest.raises(ValueError):
        aldous_statistic(constant_paths([[0.0]]), [2.0], 0.1)


# bounded-Lipschitz distance


def test_bl_identical_ensembles():
    X = brownian(100, 1.0, 1 / 32, seed=7)
    assert bl_distance(X, X, 8, seed=0) == 0.0


@pytest.mark.parametrize("x", [[0.3, 0.0], [0.6, 0.8], [3.0, -1.0]])
def test_bl_constant_ensembles(x):
    a = constant_paths([[0.0, 0.0]] * 4)
    b = constant_paths([x] * 4)
    assert bl_distance(a, b, 1, seed=0) == pytest.approx(min(np.linalg.norm(x), 1.0), abs=1e-15)


def test_bl_properties():
    X = brownian(200, 1.0, 1 / 32, seed=8)
    Y = brownian(150, 1.0, 1 / 32, seed=9)
    vals = [bl_distance(X, Y, k, seed=3) for k in (1, 2, 4, 8, 16, 64)]
    assert vals == sorted(vals) and 0.0 <= vals[-1] <= 1.0
    assert bl_distance(X, Y, 16, seed=3) == bl_distance(Y, X, 16, seed=3)
    with pytest.raises(ValueError):
        bl_distance(X, Y, 0, seed=0)
    with pytest.raises(GridError):
        bl_distance(X, brownian(10, 1.0, 1 / 16, seed=0), 4, seed=0)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.integers(1, 12))
def test_bl_triangle_inequality(a, b, c, anchors):
    P = 120
    ens = []
    for i, shift in enumerate((a, b, c)):
        W = brownian(P, 1.0, 1 / 16, seed=20 + i)
        ens.append(ensemble(W.trajectories + shift, 1 / 16))
    d = lambda u, v: bl_distance(u, v, anchors, seed=1)  # noqa: E731
    # each estimate is a max of mean differences of [0, 1]-valued functions
    se = math.sqrt(0.25 * 2 / P)
    assert d(ens[0], ens[2]) <= d(ens[0], ens[1]) + d(ens[1], ens[2]) + 3 * se


def test_bl_decreases_along_tonelli_ladder():
    sc = lipschitz_single()
    ens = [tonelli_step_ensemble(sc, n, 1 / 128, 400, seed=12) for n in (2, 4, 8, 16, 32)]
    vals = [bl_distance(a, b, 32, seed=0) for a, b in zip(ens, ens[1:])]
    assert all(y < x for x, y in zip(vals, vals[1:]))


# noncompactness proxy


def test_noncompactness_single_trajectory():
    X = ensemble(np.sin(np.linspace(0, 3, 33))[None, :, None], 1 / 32)
    out = noncompactness_proxy([X], [1e-9, 0.1, 1.0], anchors=1)
    assert out[None].tolist() == [0.0, 0.0, 0.0]


def test_noncompactness_two_constants():
    D = 0.7
    a = constant_paths([[0.0, 0.0]] * 3)
    b = constant_paths([[D, 0.0]] * 3)
    radii = [0.1, 0.5, 0.69, 0.7, 1.0]
    one = noncompactness_proxy([a, b], radii, anchors=1, labels=["a", "b"])
    assert one["pooled"].tolist() == [0.5, 0.5, 0.5, 0.0, 0.0]
    two = noncompactness_proxy([a, b], radii, anchors=2, labels=["a", "b"])
    assert two["pooled"].tolist() == [0.0] * 5
    assert one["a"].tolist() == [0.0] * 5
    np.testing.assert_array_equal(one["radii"], radii)


@given(st.lists(st.floats(0.0, 3.0), min_size=1, max_size=8), st.integers(1, 10))
def test_noncompactness_monotone(radii, anchors):
    X = brownian(40, 1.0, 1 / 16, seed=13)
    Y = brownian(30, 1.0, 1 / 16, seed=14)
    out = noncompactness_proxy([X, Y], radii, anchors=anchors, labels=[1, 2])
    for key in (1, 2, "pooled"):
        curve = out[key].tolist()
        assert curve == sorted(curve, reverse=True)
        assert all(0.0 <= v <= 1.0 for v in curve)
    more = noncompactness_proxy([X, Y], radii, anchors=anchors + 1, labels=[1, 2])
    assert np.all(more["pooled"] <= out["pooled"])


def test_noncompactness_pooled_curve_stabilizes_on_ladder():
    sc = tube_benchmark()
    ens = [tonelli_step_ensemble(sc, n, 1 / 64, 300, seed=15) for n in (4, 8, 16, 32)]
    radii = np.linspace(0.2, 2.0, 10)
    curves = [noncompactness_proxy(ens[:k], radii, anchors=16)["pooled"] for k in (2, 3, 4)]
    gaps = [np.abs(b - a).max() for a, b in zip(curves, curves[1:])]
    assert gaps[-1] <= 0.1


# Gronwall and the report


def test_gronwall_constant_paths():
    sc = lipschitz_single()
    X = tonelli_step_ensemble(sc, 4, 1 / 64, 50, seed=16)
    chk = gronwall_bound(sc, X, C_conv=1.0)
    assert chk.c > 0 and chk.lhs > 0 and chk.passed
    vals = np.linalg.norm(X.trajectories, axis=-1) ** sc.hyp.p
    by_hand = np.mean([np.trapezoid(v, dx=X.dt) for v in vals])
    assert chk.lhs == pytest.approx(by_hand, rel=1e-12)


def test_residual_table_values():
    Z = np.zeros((10, 5, 2))
    Z[:, -1, 0] = np.arange(10)
    tab = residual_table([(4, Z)])
    assert tab[4] == (4.5, pytest.approx(np.percentile(np.arange(10), 90)))


def test_report_csv_and_json(tmp_path):
    rep = DiagnosticsReport(sup_moment_p=(2.0, 0.1), gronwall_bound=math.inf,
                            conv_constant_fit=1.5, aldous_table={0.5: 0.2, 0.1: 0.05},
                            bl_matrix={(2, 4): 0.3}, residual_table={2: (0.4, 0.6)},
                            noncompactness={"pooled": np.array([0.5, 0.0]),
                                            "radii": np.array([0.1, 1.0])},
                            verdicts={"gronwall": True})
    rep.write_csv(tmp_path / "r.csv", "abc")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# scenario abc"
    assert lines[1] == ",".join(REPORT_HEADER)
    assert "aldous,0.10000000000000001,0.050000000000000003," in lines
    rep.write_json(tmp_path / "r.json")
    import json

    back = DiagnosticsReport.from_dict(json.loads((tmp_path / "r.json").read_text()))
    assert back.bl_matrix == {(2, 4): 0.3}
    assert back.residual_table == {2: (0.4, 0.6)}
    assert back.rows() == rep.rows()
