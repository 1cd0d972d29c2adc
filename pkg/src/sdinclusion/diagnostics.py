"""Ensemble statistics: sup-moments, the stochastic convolution inequality,
Aldous-type increment probabilities, bounded-Lipschitz distances between
path laws, and a covering proxy for noncompactness.

Reductions over paths run in ascending path order with ``math.fsum`` so
results do not depend on how an ensemble was produced in parallel.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .driver import GridError, generate_batch, grid_steps
from .semigroup import SemigroupOperator, apply

__all__ = [
    "sup_moment",
    "ConvolutionFit",
    "convolution_inequality_check",
    "convolution_homogeneity",
    "aldous_statistic",
    "bl_distance",
    "noncompactness_proxy",
    "GronwallCheck",
    "gronwall_bound",
    "residual_table",
    "DiagnosticsReport",
    "REPORT_HEADER",
]

REPORT_HEADER = ["metric", "param", "value", "std_error"]


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    m = len(values)
    if m == 0:
        raise ValueError("empty ensemble")
    mean = math.fsum(values) / m
    if m == 1:
        return mean, 0.0
    var = math.fsum((values - mean) ** 2) / (m - 1)
    return mean, math.sqrt(var / m)


def _norms(traj):
    return np.sqrt(np.sum(traj * traj, axis=-1))


def sup_moment(X, p: float):
    """(E sup_t |X(t)|^p, standard error) over the paths of X."""
    if not p > 0:
        raise ValueError("p must be positive")
    traj = X.trajectories if hasattr(X, "trajectories") else np.asarray(X)
    if traj.shape[0] == 0:
        raise ValueError("empty ensemble")
    return _mean_se(np.max(_norms(traj), axis=1) ** p)


# --------------------------------------------------------------------------
# stochastic convolution


@dataclass
class ConvolutionFit:
    fit_Cp: float
    verdict: str
    t_ladder: list
    lhs: list
    lhs_se: list
    rhs: list
    ratios: list


def _convolution_sup(op, g, p, T, dt, paths, seed):
    """Per-path running sup of |int_0^s S(s-r) g dW|^p on the grid."""
    N = grid_steps(T, dt)
    g0 = np.atleast_2d(np.asarray(g(0.0), dtype=float))
    dE, dH = g0.shape
    if dE != op.dim:
        raise ValueError("g has the wrong number of rows for the generator")
    dW = generate_batch(seed, range(paths), dH, T, dt)
    S1 = op.propagator(dt)
    Y = np.zeros((paths, dE))
    run = np.zeros((N + 1, paths))
    gp = np.zeros(N + 1)
    for k in range(N):
        gk = np.atleast_2d(np.asarray(g(k * dt), dtype=float))
        Y = apply(S1, Y + np.sum(gk * dW[:, k, None, :], axis=-1))
        run[k + 1] = np.maximum(run[k], _norms(Y) ** p)
        gp[k + 1] = gp[k] + float(np.sum(gk * gk)) ** (p / 2) * dt
    return run, gp


def convolution_inequality_check(op: SemigroupOperator, g, p: float, t_ladder, paths: int,
                                 seed: int, dt: float | None = None) -> ConvolutionFit:
    """Fit C_p in E sup_{s<=t} |W_A g(s)|^p <= C_p t^(p/2-1) E int_0^t |g|^p ds.

    ``g`` is a deterministic step process, a function of time returning a
    dE x dH matrix evaluated at the left end of each grid cell.  The fit is
    the largest ratio over the ladder; the verdict is ``pass`` when the
    ratios agree within a factor 3.
    """
    if not p > 2:
        raise ValueError("p must exceed 2")
    ladder = sorted(float(t) for t in t_ladder)
    T = ladder[-1]
    dt = dt or T / 256
    idx = [grid_steps(t, dt, "dt") for t in ladder]
    run, gp = _convolution_sup(op, g, p, T, dt, paths, seed)
    lhs, se, rhs, ratios = [], [], [], []
    for t, k in zip(ladder, idx):
        m, s = _mean_se(run[k])
        r = t ** (p / 2 - 1) * gp[k]
        lhs.append(m)
        se.append(s)
        rhs.append(r)
        ratios.append(m / r if r > 0 else 0.0)
    positive = [r for r in ratios if r > 0]
    if not positive:
        return ConvolutionFit(0.0, "pass", ladder, lhs, se, rhs, ratios)
    stable = len(positive) == len(ratios) and max(positive) <= 3 * min(positive)
    return ConvolutionFit(max(positive), "pass" if stable else "fail", ladder, lhs, se, rhs,
                          ratios)


def convolution_homogeneity(op, g, p, t, paths, seed, factor=2.0, dt=None):
    """LHS(factor * g) / (factor^p LHS(g)) on common Brownian paths."""
    dt = dt or t / 256
    base, _ = _convolution_sup(op, g, p, t, dt, paths, seed)
    scaled, _ = _convolution_sup(op, lambda s: factor * np.asarray(g(s), dtype=float), p, t,
                                 dt, paths, seed)
    a = _mean_se(base[-1])[0]
    b = _mean_se(scaled[-1])[0]
    return b / (factor ** p * a) if a > 0 else float("nan")


# --------------------------------------------------------------------------
# tightness statistics


def aldous_statistic(X, deltas, eta: float) -> dict:
    """max over grid pairs s < t <= s + delta of P(|X(t) - X(s)| > eta).

    Deterministic grid times replace the stopping times of the criterion.
    A delta below dt still admits adjacent pairs.
    """
    traj = X.trajectories
    dt = X.dt
    deltas = [float(d) for d in deltas]
    if any(not d > 0 or d > X.T + 1e-12 for d in deltas):
        raise ValueError("deltas must lie in (0, T]")
    lags = {d: max(1, int(math.floor(d / dt + 1e-9))) for d in deltas}
    top = min(max(lags.values()), X.steps)
    best = np.zeros(top + 1)
    P = traj.shape[0]
    for m in range(1, top + 1):
        exceed = _norms(traj[:, m:] - traj[:, :-m]) > eta
        counts = np.sum(exceed, axis=0)
        best[m] = max(best[m - 1], float(np.max(counts)) / P)
    return {d: float(best[min(lags[d], top)]) for d in sorted(deltas)}


def _check_grid(X1, X2):
    if X1.trajectories.shape[1:] != X2.trajectories.shape[1:] or abs(X1.dt - X2.dt) > 1e-15:
        raise GridError("ensembles live on different grids")


def _sup_dist(A, B):
    """Sup-norm distances between every trajectory of A and every one of B."""
    out = np.empty((A.shape[0], B.shape[0]))
    for j in range(B.shape[0]):
        out[:, j] = np.max(_norms(A - B[j]), axis=1)
    return out


def _anchor_order(P, seed):
    return np.random.default_rng([seed, P]).permutation(P)


def bl_distance(X1, X2, anchors: int, seed: int) -> float:
    """Lower estimate of the bounded-Lipschitz distance between two path laws.

    The dictionary holds u -> max(0, 1 - d(u, v)) for ``anchors`` anchor
    trajectories v of each ensemble (d = sup-norm over the grid), chosen as
    prefixes of a seeded permutation so more anchors never lower the value.
    """
    _check_grid(X1, X2)
    if anchors < 1:
        raise ValueError("anchors must be >= 1")
    A1, A2 = X1.trajectories, X2.trajectories
    pick1 = _anchor_order(A1.shape[0], seed)[:anchors]
    pick2 = _anchor_order(A2.shape[0], seed)[:anchors]
    V = np.concatenate([A1[np.sort(pick1)], A2[np.sort(pick2)]])
    f1 = np.maximum(0.0, 1.0 - _sup_dist(A1, V))
    f2 = np.maximum(0.0, 1.0 - _sup_dist(A2, V))
    best = 0.0
    for j in range(V.shape[0]):
        diff = abs(math.fsum(f1[:, j]) / A1.shape[0] - math.fsum(f2[:, j]) / A2.shape[0])
        best = max(best, diff)
    return best


def _greedy_cover(traj, radii, anchors):
    P = traj.shape[0]
    chosen = [0]
    dmin = np.max(_norms(traj - traj[0]), axis=1)
    while len(chosen) < min(anchors, P):
        nxt = int(np.argmax(dmin))
        if dmin[nxt] == 0:
            break
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.max(_norms(traj - traj[nxt]), axis=1))
    return np.array([np.count_nonzero(dmin > r) / P for r in radii]), chosen


def noncompactness_proxy(ensembles, radius_grid, anchors: int = 8, labels=None) -> dict:
    """Uncovered fraction at each radius after a farthest-point greedy cover.

    The first anchor is trajectory 0; each further anchor is the trajectory
    farthest (in sup-norm) from the anchors so far.  Returns one curve per
    ensemble plus a pooled curve under the key ``"pooled"``.
    """
    ensembles = list(ensembles)
    if not ensembles:
        raise ValueError("no ensembles")
    for E in ensembles[1:]:
        _check_grid(ensembles[0], E)
    radii = np.asarray(sorted(float(r) for r in radius_grid))
    labels = labels or [getattr(E, "n", i) for i, E in enumerate(ensembles)]
    out = {}
    for lab, E in zip(labels, ensembles):
        out[lab] = _greedy_cover(E.trajectories, radii, anchors)[0]
    pooled = np.concatenate([E.trajectories for E in ensembles])
    out["pooled"] = _greedy_cover(pooled, radii, anchors)[0]
    out["radii"] = radii
    return out


# --------------------------------------------------------------------------
# Gronwall


@dataclass
class GronwallCheck:
    lhs: float
    lhs_se: float
    c: float
    bound: float
    slack: float = 2.0

    @property
    def passed(self):
        return self.lhs <= self.slack * self.bound


def gronwall_bound(sc, X, C_conv: float, p: float | None = None) -> GronwallCheck:
    """Compare E int_0^T |X|^p dt with T c exp(c T), where

    c = 3^(p-1) C_B(T)^p (E|xi|^p + 2^(p-1) eta^p (1 + C_conv) T).
    """
    p = sc.hyp.p if p is None else p
    T = sc.T
    xi_p = _mean_se(_norms(X.xi) ** p)[0]
    CB = sc.op.C_B(T)
    c = 3 ** (p - 1) * CB ** p * (xi_p + 2 ** (p - 1) * sc.hyp.eta ** p * (1 + C_conv) * T)
    try:
        bound = T * c * math.exp(c * T)
    except OverflowError:
        bound = math.inf
    vals = _norms(X.trajectories) ** p
    integrals = X.dt * (0.5 * vals[:, 0] + vals[:, 1:-1].sum(axis=1) + 0.5 * vals[:, -1])
    lhs, se = _mean_se(integrals)
    return GronwallCheck(lhs, se, c, bound)


def residual_table(ladder) -> dict:
    """n -> (mean, 90th percentile) of |Z_n(T)| from (n, Z) pairs."""
    out = {}
    for n, Z in ladder:
        r = _norms(Z[:, -1])
        out[n] = (_mean_se(r)[0], float(np.percentile(r, 90)))
    return out


# --------------------------------------------------------------------------
# report


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass
class DiagnosticsReport:
    sup_moment_p: tuple | None = None
    gronwall_bound: float | None = None
    gronwall_lhs: tuple | None = None
    conv_constant_fit: float | None = None
    aldous_table: dict = field(default_factory=dict)
    bl_matrix: dict = field(default_factory=dict)
    residual_table: dict = field(default_factory=dict)
    noncompactness: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)

    def rows(self):
        rows = []
        if self.sup_moment_p is not None:
            rows.append(("sup_moment_p", "", self.sup_moment_p[0], self.sup_moment_p[1]))
        if self.gronwall_lhs is not None:
            rows.append(("gronwall_lhs", "", self.gronwall_lhs[0], self.gronwall_lhs[1]))
        if self.gronwall_bound is not None:
            rows.append(("gronwall_bound", "", self.gronwall_bound, None))
        if self.conv_constant_fit is not None:
            rows.append(("conv_constant_fit", "", self.conv_constant_fit, None))
        for d in sorted(self.aldous_table):
            rows.append(("aldous", _fmt(d), self.aldous_table[d], None))
        for key in sorted(self.bl_matrix):
            rows.append(("bl_distance", f"{key[0]}:{key[1]}", self.bl_matrix[key], None))
        for n in sorted(self.residual_table):
            mean, p90 = self.residual_table[n]
            rows.append(("residual_mean", str(n), mean, None))
            rows.append(("residual_p90", str(n), p90, None))
        radii = self.noncompactness.get("radii")
        if radii is not None:
            for i, r in enumerate(radii):
                rows.append(("uncovered_pooled", _fmt(r), self.noncompactness["pooled"][i], None))
        for name in sorted(self.verdicts):
            rows.append(("verdict_" + name, "", 1.0 if self.verdicts[name] else 0.0, None))
        return rows

    def write_csv(self, path, scenario_hash=""):
        with open(path, "w", newline="") as fh:
            fh.write(f"# scenario {scenario_hash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for metric, param, value, se in self.rows():
                w.writerow([metric, param, _fmt(value), _fmt(se)])

    def to_dict(self):
        d = asdict(self)
        d["bl_matrix"] = {f"{a}:{b}": v for (a, b), v in self.bl_matrix.items()}
        d["aldous_table"] = {_fmt(k): v for k, v in sorted(self.aldous_table.items())}
        d["residual_table"] = {str(k): list(v) for k, v in sorted(self.residual_table.items())}
        d["noncompactness"] = {str(k): np.asarray(v).tolist()
                               for k, v in self.noncompactness.items()}
        return d

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d):
        rep = cls()
        rep.sup_moment_p = tuple(d["sup_moment_p"]) if d.get("sup_moment_p") else None
        rep.gronwall_bound = d.get("gronwall_bound")
        rep.gronwall_lhs = tuple(d["gronwall_lhs"]) if d.get("gronwall_lhs") else None
        rep.conv_constant_fit = d.get("conv_constant_fit")
        rep.aldous_table = {float(k): v for k, v in d.get("aldous_table", {}).items()}
        rep.bl_matrix = {tuple(int(x) for x in k.split(":")): v
                         for k, v in d.get("bl_matrix", {}).items()}
        rep.residual_table = {int(k): tuple(v) for k, v in d.get("residual_table", {}).items()}
        nc = d.get("noncompactness", {})
        rep.noncompactness = {k: np.asarray(v) for k, v in nc.items()}
        rep.verdicts = dict(d.get("verdicts", {}))
        return rep
