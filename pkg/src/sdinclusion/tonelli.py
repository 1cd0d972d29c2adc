"""The delayed (Tonelli) approximation of a semilinear stochastic inclusion.

Given a lag 1/n = L * dt, the scheme holds X at the initial value on
[0, 1/n] and afterwards integrates the mild form up to t - 1/n only:

    X(t_k) = S(t_k - 1/n) xi + sum_{j < k - L} S(t_k - t_j) (f_j dt + g_j dW_j),

with f_j, g_j selected from F(t_j, X(t_j)), G(t_j, X(t_j)).  Every selection
therefore refers to a state computed at least one lag earlier, and the
scheme is explicit.  Integrals use the left-endpoint (Ito) rule.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .coefficients import (
    CoefficientHypotheses,
    MultiMap,
    SelectionError,
    Steiner,
    Support,
    VertexRandom,
    caratheodory_selector,
    sample_states,
)
from .convexset import distance_to_point
from .driver import REGION_INITIAL, GridError, generate_batch, grid_steps, stream
from .semigroup import SemigroupOperator, apply

__all__ = [
    "InitialCondition",
    "InclusionScenario",
    "PathEnsemble",
    "BlowUpError",
    "lag_steps",
    "tonelli_step_ensemble",
    "phi_apply",
    "residual_Z",
    "recompute_selections",
    "mild_euler_reference",
    "terminal_norms",
]

CHUNK = 512


class BlowUpError(RuntimeError):
    def __init__(self, path, step, norm):
        super().__init__(f"path {path} left the norm cap at step {step} (|X| = {norm:.3e})")
        self.path = path
        self.step = step
        self.norm = norm


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """Deterministic vector, or Gaussian N(mean, cov) when ``cov`` is given."""

    mean: np.ndarray
    cov: np.ndarray | None = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "mean", mean)
        if self.cov is not None:
            cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
            if cov.shape != (mean.size, mean.size) or not np.allclose(cov, cov.T):
                raise ValueError("covariance must be a symmetric matrix matching the mean")
            w, V = np.linalg.eigh(cov)
            if w.min() < -1e-12 * max(1.0, w.max()):
                raise ValueError("covariance is not positive semidefinite")
            object.__setattr__(self, "cov", cov)
            object.__setattr__(self, "_root", V * np.sqrt(np.clip(w, 0, None)))

    @property
    def dim(self):
        return self.mean.size

    @property
    def deterministic(self):
        return self.cov is None

    def sample(self, seed, path_indices):
        path_indices = list(path_indices)
        out = np.tile(self.mean, (len(path_indices), 1))
        if self.cov is None:
            return out
        Z = np.array([stream(seed, p, REGION_INITIAL).standard_normal(self.dim)
                      for p in path_indices]).reshape(len(path_indices), self.dim)
        return out + apply(self._root, Z)

    def describe(self):
        if self.cov is None:
            return f"point{self.mean.tolist()}"
        return f"gaussian{self.mean.tolist()}{self.cov.tolist()}"


@dataclass(eq=False)
class InclusionScenario:
    """Problem data: generator, coefficients, initial law, horizon, selection rule.

    ``G`` takes values in R^(dE*dH), read as row-major dE x dH matrices.
    """

    dE: int
    dH: int
    op: SemigroupOperator
    F: MultiMap
    G: MultiMap
    hyp: CoefficientHypotheses
    xi: InitialCondition
    T: float
    selector_rule: object = field(default_factory=Steiner)
    norm_cap: float = 1e12
    fingerprint: str | None = None

    def __post_init__(self):
        if self.dE < 1 or self.dH < 1:
            raise ValueError("dimensions must be positive")
        if self.op.dim != self.dE:
            raise ValueError(f"generator acts on R^{self.op.dim}, state space is R^{self.dE}")
        for name, M, cod in (("F", self.F, self.dE), ("G", self.G, self.dE * self.dH)):
            if M.domain_dim != self.dE or M.codomain_dim != cod:
                raise ValueError(f"{name} maps R^{M.domain_dim} -> R^{M.codomain_dim}, "
                                 f"expected R^{self.dE} -> R^{cod}")
        if self.xi.dim != self.dE:
            raise ValueError("initial condition has the wrong dimension")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        self._certified = False

    def scenario_hash(self) -> str:
        text = self.fingerprint
        if text is None:
            text = "|".join([
                str(self.dE), str(self.dH), self.op.A.tobytes().hex(), repr(self.T),
                self.F.description, self.G.description, self.xi.describe(),
                repr(self.selector_rule), repr(self.norm_cap),
            ])
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def rules(self, seed):
        """Selection rules for F and G, with a random rule bound to ``seed``."""
        rule = self.selector_rule
        if isinstance(rule, VertexRandom):
            if rule.seed is None:
                rule = replace(rule, seed=seed)
            return rule, replace(rule, stream=1)
        if isinstance(rule, Support) and rule.u.u.size == self.dE and self.dH > 1:
            # every column of the diffusion matrix is pushed along u
            return rule, Support(np.kron(rule.u.u, np.ones(self.dH)))
        return rule, rule

    def certify_selectors(self, tol=1e-6):
        """Membership of both selectors on random states (once per scenario)."""
        if self._certified:
            return
        samples = sample_states(self.dE, self.T, n=16, seed=2024)
        rf, rg = self.rules(0)
        caratheodory_selector(self.F, rf, samples, tol)
        caratheodory_selector(self.G, rg, samples, tol)
        self._certified = True


@dataclass(eq=False)
class PathEnsemble:
    """Trajectories on the grid t_k = k dt, with the data that produced them.

    ``n`` is the Tonelli lag parameter, or None for lag-free constructions.
    """

    scenario_hash: str
    n: int | None
    dt: float
    T: float
    seed: int
    path_indices: np.ndarray
    trajectories: np.ndarray
    increments: np.ndarray
    selections_f: np.ndarray | None = None
    selections_g: np.ndarray | None = None

    @property
    def paths(self):
        return self.trajectories.shape[0]

    @property
    def steps(self):
        return self.trajectories.shape[1] - 1

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)

    @property
    def xi(self):
        return self.trajectories[:, 0]

    @property
    def lag_steps(self):
        return 0 if self.n is None else lag_steps(self.n, self.dt)


def lag_steps(n, dt) -> int:
    """L with 1/n = L dt, or GridError."""
    if n is None:
        return 0
    if int(n) != n or n < 1:
        raise ValueError(f"lag parameter n must be a positive integer, got {n!r}")
    L = int(round(1.0 / (n * dt)))
    if L < 1 or abs(L * dt * n - 1.0) > 1e-9:
        raise GridError(f"lag 1/{n} is not a multiple of dt={dt!r}")
    return L


def _select(sc, rules, t, X, step, paths):
    f = sc.F.select(rules[0], t, X, step, paths)
    g = sc.G.select(rules[1], t, X, step, paths).reshape(X.shape[0], sc.dE, sc.dH)
    return f, g


def _kick(f, g, dt, dW):
    return f * dt + np.sum(g * dW[:, None, :], axis=-1)


def _check_cap(sc, X, paths, step):
    norms = np.sqrt(np.sum(X * X, axis=-1))
    bad = ~(norms <= sc.norm_cap)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise BlowUpError(int(paths[i]), step, float(norms[i]))


def _tonelli_chunk(sc, rules, L, dt, xi, dW, paths, store):
    P, N = dW.shape[0], dW.shape[1]
    X = np.empty((P, N + 1, sc.dE))
    X[:, 0] = xi
    fs = np.empty((P, N, sc.dE)) if store else None
    gs = np.empty((P, N, sc.dE, sc.dH)) if store else None
    pending = []
    S1 = sc.op.propagator(dt)
    SL = sc.op.propagator((L + 1) * dt)
    for k in range(N):
        f, g = _select(sc, rules, k * dt, X[:, k], k, paths)
        if store:
            fs[:, k], gs[:, k] = f, g
        pending.append(_kick(f, g, dt, dW[:, k]))
        if k < L:
            X[:, k + 1] = xi
        else:
            X[:, k + 1] = apply(S1, X[:, k]) + apply(SL, pending[k - L])
            pending[k - L] = None
            _check_cap(sc, X[:, k + 1], paths, k + 1)
    return X, fs, gs


def _euler_chunk(sc, rules, L, dt, xi, dW, paths, store):
    P, N = dW.shape[0], dW.shape[1]
    X = np.empty((P, N + 1, sc.dE))
    X[:, 0] = xi
    fs = np.empty((P, N, sc.dE)) if store else None
    gs = np.empty((P, N, sc.dE, sc.dH)) if store else None
    S1 = sc.op.propagator(dt)
    for k in range(N):
        f, g = _select(sc, rules, k * dt, X[:, k], k, paths)
        if store:
            fs[:, k], gs[:, k] = f, g
        X[:, k + 1] = apply(S1, X[:, k] + _kick(f, g, dt, dW[:, k]))
        _check_cap(sc, X[:, k + 1], paths, k + 1)
    return X, fs, gs


def _run(kernel, sc, n, L, dt, paths, seed, threads, store):
    if isinstance(paths, (int, np.integer)):
        if paths < 1:
            raise ValueError("paths must be positive")
        path_indices = np.arange(paths)
    else:
        path_indices = np.asarray(paths, dtype=np.int64)
    N = grid_steps(sc.T, dt)
    sc.certify_selectors()
    rules = sc.rules(seed)
    dW = generate_batch(seed, path_indices, sc.dH, sc.T, dt)
    xi = sc.xi.sample(seed, path_indices)
    P = len(path_indices)
    X = np.empty((P, N + 1, sc.dE))
    fs = np.empty((P, N, sc.dE)) if store else None
    gs = np.empty((P, N, sc.dE, sc.dH)) if store else None

    def work(lo):
        hi = min(lo + CHUNK, P)
        out = kernel(sc, rules, L, dt, xi[lo:hi], dW[lo:hi], path_indices[lo:hi], store)
        X[lo:hi] = out[0]
        if store:
            fs[lo:hi], gs[lo:hi] = out[1], out[2]

    starts = range(0, P, CHUNK)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for lo in starts:
            work(lo)
    return PathEnsemble(sc.scenario_hash(), n, float(dt), float(sc.T), int(seed),
                        path_indices, X, dW, fs, gs)


def _spot_check(sc, ens, count=8, tol=1e-6):
    """Stored f-values lie in F at the state they were selected from."""
    if ens.selections_f is None or count <= 0:
        return
    rng = np.random.default_rng([ens.seed, 7])
    for _ in range(count):
        i = int(rng.integers(ens.paths))
        k = int(rng.integers(ens.steps))
        K = sc.F(k * ens.dt, ens.trajectories[i, k])
        d, _ = distance_to_point(K, ens.selections_f[i, k], tol=tol / 4)
        if d > tol:
            raise SelectionError(f"stored selection of path {ens.path_indices[i]} at step {k} "
                                 f"is {d:.3e} away from F", d)


def tonelli_step_ensemble(sc: InclusionScenario, n: int, dt: float, paths, seed: int,
                          threads: int = 1, store_selections: bool = True,
                          spot_checks: int = 8) -> PathEnsemble:
    """Simulate the lag-1/n scheme on ``paths`` Brownian paths.

    ``paths`` is a count (indices 0..paths-1) or an explicit list of path
    indices; a path's trajectory depends only on (seed, index).
    """
    L = lag_steps(n, dt)
    grid_steps(sc.T, dt)
    ens = _run(_tonelli_chunk, sc, int(n), L, dt, paths, seed, threads, store_selections)
    _spot_check(sc, ens, spot_checks)
    return ens


def _single_valued(M: MultiMap, sc: InclusionScenario) -> bool:
    if M.is_singleton():
        return True
    for t, x in sample_states(sc.dE, sc.T, n=16, seed=99):
        V, r = M(t, x).canonical
        if V.shape[0] != 1 or r != 0:
            return False
    return True


def mild_euler_reference(sc: InclusionScenario, dt: float, paths, seed: int,
                         threads: int = 1) -> PathEnsemble:
    """Exponential Euler X_{k+1} = S(dt)(X_k + f dt + g dW) for single-valued F, G."""
    for name, M in (("F", sc.F), ("G", sc.G)):
        if not _single_valued(M, sc):
            raise ValueError(f"{name} is set-valued; the mild Euler reference needs "
                             "single-valued coefficients")
    return _run(_euler_chunk, sc, None, 0, dt, paths, seed, threads, True)


def recompute_selections(sc: InclusionScenario, X: PathEnsemble):
    """Selections along the trajectories of X, reproduced from the rule."""
    rules = sc.rules(X.seed)
    P, N = X.paths, X.steps
    fs = np.empty((P, N, sc.dE))
    gs = np.empty((P, N, sc.dE, sc.dH))
    for k in range(N):
        fs[:, k], gs[:, k] = _select(sc, rules, k * X.dt, X.trajectories[:, k], k,
                                     X.path_indices)
    return fs, gs


def _propagator_stack(op, dt, N):
    return np.stack([op.propagator(m * dt) for m in range(N + 1)])


def phi_apply(sc: InclusionScenario, X: PathEnsemble, lag_n: int | None = None,
              use_stored: bool = False) -> PathEnsemble:
    """One application of the solution operator along X.

    Selections are taken along the input trajectories (recomputed by the
    scenario's rule, or the stored ones with ``use_stored``).  The output is
    evaluated as a direct convolution sum, independently of the recursion
    used by the simulator:

        Y(t_k) = S(t_k - lag) xi + sum_{j < k - L} S((k - j) dt) c_j,  Y = xi on [0, lag].
    """
    if X.T != sc.T or abs(X.steps * X.dt - sc.T) > 1e-9 * sc.T:
        raise GridError("ensemble grid does not match the scenario horizon")
    if use_stored:
        if X.selections_f is None:
            raise ValueError("ensemble carries no stored selections")
        fs, gs = X.selections_f, X.selections_g
    else:
        fs, gs = recompute_selections(sc, X)
    L = lag_steps(lag_n, X.dt)
    N = X.steps
    c = fs * X.dt + np.sum(gs * X.increments[:, :, None, :], axis=-1)
    Sk = _propagator_stack(sc.op, X.dt, N)
    xi = X.xi
    Y = np.empty_like(X.trajectories)
    for k in range(N + 1):
        if k <= L:
            Y[:, k] = xi
            continue
        m = k - L
        Y[:, k] = apply(Sk[m], xi) + np.einsum("jab,pjb->pa", Sk[k - np.arange(m)], c[:, :m])
    return PathEnsemble(X.scenario_hash, lag_n, X.dt, X.T, X.seed, X.path_indices, Y,
                        X.increments, fs, gs)


def residual_Z(sc: InclusionScenario, X: PathEnsemble, recompute: bool = False) -> np.ndarray:
    """Z(t) = -X(t) + S(t) xi + int_0^t S(t-s) f ds + int_0^t S(t-s) g dW.

    The integrals run over the whole of [0, t] with the selections made
    along X, so Z measures how far X is from solving the lag-free mild
    equation.  Shape ``(paths, steps + 1, dE)``.
    """
    if X.selections_f is None:
        if not recompute:
            raise ValueError("ensemble carries no stored selections (pass recompute=True)")
        fs, gs = recompute_selections(sc, X)
    else:
        fs, gs = X.selections_f, X.selections_g
    S1 = sc.op.propagator(X.dt)
    M = np.empty_like(X.trajectories)
    M[:, 0] = X.xi
    for k in range(X.steps):
        M[:, k + 1] = apply(S1, M[:, k] + _kick(fs[:, k], gs[:, k], X.dt, X.increments[:, k]))
    return M - X.trajectories


def terminal_norms(Z: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(Z[:, -1] ** 2, axis=-1))

