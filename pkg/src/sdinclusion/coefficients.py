"""Set-valued drift and diffusion coefficients, comparison moduli, and
sampling-based checks of the growth and modulus conditions.

A :class:`MultiMap` maps ``(t, x)`` to a :class:`~sdinclusion.convexset.ConvexBody`.
The shipped families also know how to select from their values for a whole
batch of states at once, which is what the path simulator uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .convexset import (
    ConvexBody,
    Direction,
    Point,
    QuadratureSpec,
    Scaled,
    Translated,
    distance_to_point,
    hausdorff_distance,
    steiner_point,
    support_point,
    support_points,
)
from .driver import REGION_SELECTION, keyed_normals

__all__ = [
    "MultiMap",
    "FunctionMap",
    "Tube",
    "Singleton",
    "OsgoodScalar",
    "Affine",
    "OsgoodModulus",
    "linear",
    "loglinear",
    "sqrt_modulus",
    "zero_modulus",
    "CoefficientHypotheses",
    "Steiner",
    "Support",
    "VertexRandom",
    "Selector",
    "SelectionError",
    "caratheodory_selector",
    "check_growth",
    "check_modulus",
    "osgood_iterate",
    "sample_states",
    "sample_pairs",
]


# --------------------------------------------------------------------------
# selection rules


@dataclass(frozen=True)
class Steiner:
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)
    name = "steiner"

    def pick(self, K, step, path):
        return steiner_point(K, self.quad, certify=False)


@dataclass(frozen=True)
class Support:
    u: Direction
    name = "support"

    def __post_init__(self):
        if not isinstance(self.u, Direction):
            object.__setattr__(self, "u", Direction.of(self.u))

    def pick(self, K, step, path):
        return support_point(K, self.u)


@dataclass(frozen=True)
class VertexRandom:
    """Support point in a random direction keyed by (seed, path, step)."""

    seed: int | None = None
    stream: int = 0
    name = "vertex_random"

    def directions(self, paths, step, dim):
        seed = 0 if self.seed is None else self.seed
        return keyed_normals(seed, paths, step, dim, region=REGION_SELECTION + self.stream)

    def pick(self, K, step, path):
        return support_points(K, self.directions([path], step, K.dim))[0]


# --------------------------------------------------------------------------
# multimaps


class MultiMap:
    """Base class: ``F(t, x)`` is a nonempty compact convex set."""

    domain_dim: int
    codomain_dim: int
    description: str = ""

    def __call__(self, t: float, x) -> ConvexBody:
        raise NotImplementedError

    def select(self, rule, t: float, X: np.ndarray, step: int = 0, paths=None) -> np.ndarray:
        """Apply ``rule`` to F(t, x) for every row x of X."""
        X = np.atleast_2d(X)
        if paths is None:
            paths = np.arange(X.shape[0])
        out = np.empty((X.shape[0], self.codomain_dim))
        for i, (x, p) in enumerate(zip(X, paths)):
            out[i] = rule.pick(self(t, x), step, int(p))
        return out

    def is_singleton(self) -> bool:
        return False


class FunctionMap(MultiMap):
    """Wraps an arbitrary callable returning bodies."""

    def __init__(self, fn: Callable, domain_dim: int, codomain_dim: int, description: str = ""):
        self.fn = fn
        self.domain_dim = domain_dim
        self.codomain_dim = codomain_dim
        self.description = description or getattr(fn, "__name__", "function")

    def __call__(self, t, x):
        K = self.fn(t, np.asarray(x, dtype=float))
        if K.dim != self.codomain_dim:
            raise ValueError(f"{self.description} returned a body in R^{K.dim}, "
                             f"expected R^{self.codomain_dim}")
        return K


@dataclass(frozen=True)
class Affine:
    """r(t) = a + b t, required nonnegative on the horizon."""

    a: float
    b: float = 0.0

    def __call__(self, t):
        return self.a + self.b * t

    def max_on(self, T):
        return max(self(0.0), self(T))

    def min_on(self, T):
        return min(self(0.0), self(T))


class Tube(MultiMap):
    """F(t, x) = c + B x + r(t) K0.

    Translation-equivariant in x, so Hausd(F(t,x), F(t,y)) = |B(x - y)| and
    the family is Lipschitz with constant ||B||.
    """

    def __init__(self, center, matrix, body: ConvexBody, radius_fn=1.0, description="tube"):
        self.center = np.asarray(center, dtype=float)
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.body = body
        self.radius_fn = radius_fn if isinstance(radius_fn, Affine) else Affine(float(radius_fn))
        self.codomain_dim = self.center.shape[0]
        self.domain_dim = self.matrix.shape[1]
        self.description = description
        if self.matrix.shape[0] != self.codomain_dim or body.dim != self.codomain_dim:
            raise ValueError("tube center, matrix rows and body must share a dimension")
        self._steiner = {}

    def _r(self, t):
        r = self.radius_fn(t)
        if r < 0:
            raise ValueError(f"tube radius function is negative at t={t}")
        return r

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        base = self.center + self.matrix @ x
        return Translated(base, Scaled(self._r(t), self.body))

    def select(self, rule, t, X, step=0, paths=None):
        X = np.atleast_2d(X)
        base = self.center + np.sum(X[:, None, :] * self.matrix, axis=-1)
        r = self._r(t)
        if isinstance(rule, Steiner):
            key = rule.quad
            if key not in self._steiner:
                self._steiner[key] = steiner_point(self.body, rule.quad)
            return base + r * self._steiner[key]
        if isinstance(rule, Support):
            return base + r * support_point(self.body, rule.u)
        if isinstance(rule, VertexRandom):
            if paths is None:
                paths = np.arange(X.shape[0])
            U = rule.directions(paths, step, self.codomain_dim)
            return base + r * support_points(self.body, U)
        return super().select(rule, t, X, step, paths)

    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))

    def growth_constant(self, T: float) -> float:
        reach = hausdorff_distance(Point(np.zeros(self.codomain_dim)), self.body)
        return max(float(np.linalg.norm(self.center)) + self.radius_fn.max_on(T) * reach,
                   self.lipschitz())

    def declared_modulus(self, p: float) -> "OsgoodModulus":
        return linear(self.lipschitz() ** p)

    def is_singleton(self):
        V, r = self.body.canonical
        return V.shape[0] == 1 and r == 0


class Singleton(MultiMap):
    """F(t, x) = {offset + B x}, or {fn(t, x)} for a vectorized callable."""

    def __init__(self, offset, matrix=None, fn: Callable | None = None, domain_dim=None,
                 description="singleton"):
        self.offset = np.asarray(offset, dtype=float)
        self.codomain_dim = self.offset.shape[0]
        self.fn = fn
        if matrix is None:
            if domain_dim is None:
                raise ValueError("domain_dim is required without a matrix")
            self.matrix = np.zeros((self.codomain_dim, domain_dim))
        else:
            self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.domain_dim = self.matrix.shape[1]
        self.description = description

    def _value(self, t, X):
        V = self.offset + np.sum(X[:, None, :] * self.matrix, axis=-1)
        if self.fn is not None:
            V = V + self.fn(t, X)
        return V

    def __call__(self, t, x):
        return Point(self._value(t, np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def select(self, rule, t, X, step=0, paths=None):
        return self._value(t, np.atleast_2d(X))

    def lipschitz(self):
        if self.fn is not None:
            raise ValueError("Lipschitz constant unknown for a callable singleton")
        return float(np.linalg.norm(self.matrix, 2))

    def growth_constant(self, T):
        return max(float(np.linalg.norm(self.offset)), self.lipschitz())

    def declared_modulus(self, p):
        return linear(self.lipschitz() ** p)

    def is_singleton(self):
        return True


def _osgood_profile(x, p):
    """Odd profile, r (1 + p log(1/r))^(1/p) on |x| < 1 and identity beyond."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    out = x.copy()
    inner = (a > 0) & (a < 1)
    out[inner] = np.sign(x[inner]) * a[inner] * (1.0 + p * np.log(1.0 / a[inner])) ** (1.0 / p)
    return out


class OsgoodScalar(Singleton):
    """Scalar drift kappa * theta(x) that is continuous but not Lipschitz at 0.

    |theta(x) - theta(y)|^p <= 3^p * r^p (1 - log r^p) for r = |x - y| <= 1,
    so it satisfies the modulus condition with ``loglinear(3^p kappa^p)``.
    """

    def __init__(self, kappa: float, p: float, description="osgood_scalar"):
        self.kappa = float(kappa)
        self.p = float(p)
        super().__init__([0.0], [[0.0]],
                         fn=lambda t, X: self.kappa * _osgood_profile(X, self.p),
                         description=description)

    def lipschitz(self):
        return math.inf

    def growth_constant(self, T):
        return self.kappa

    def declared_modulus(self, p):
        return loglinear((3.0 * self.kappa) ** p)


# --------------------------------------------------------------------------
# moduli and hypotheses


@dataclass(frozen=True)
class OsgoodModulus:
    """Comparison function L(t, u), vectorized in u."""

    fn: Callable
    label: str

    def __call__(self, t, u):
        return self.fn(t, np.asarray(u, dtype=float))

    def shape_report(self, T: float = 1.0, u_max: float = 10.0, grid: int = 200, times: int = 5):
        """Finite-difference monotonicity and curvature checks on a grid."""
        u = np.linspace(0.0, u_max, grid + 1)
        nondecreasing = convex = concave = True
        at_zero = 0.0
        for t in np.linspace(0.0, T, times):
            v = np.asarray(self(t, u), dtype=float)
            scale = 1e-10 * max(1.0, float(np.max(np.abs(v))))
            d1 = np.diff(v)
            d2 = np.diff(v, 2)
            nondecreasing &= bool(np.all(d1 >= -scale))
            convex &= bool(np.all(d2 >= -scale))
            concave &= bool(np.all(d2 <= scale))
            at_zero = max(at_zero, abs(float(v[0])))
        return {"nondecreasing": nondecreasing, "convex": convex, "concave": concave,
                "zero_at_origin": at_zero == 0.0}


def linear(C: float) -> OsgoodModulus:
    C = float(C)
    return OsgoodModulus(lambda t, u: C * u, f"linear(C={C:g})")


def _loglinear(u, C):
    u = np.asarray(u, dtype=float)
    out = C * u
    inner = (u > 0) & (u < 1)
    out = np.where(inner, C * u * (1.0 - np.log(np.where(inner, u, 1.0))), out)
    return out


def loglinear(C: float) -> OsgoodModulus:
    """C u (1 - log u) on [0, 1], continued as C u beyond."""
    C = float(C)
    return OsgoodModulus(lambda t, u: _loglinear(u, C), f"loglinear(C={C:g})")


def sqrt_modulus(C: float = 1.0) -> OsgoodModulus:
    C = float(C)
    return OsgoodModulus(lambda t, u: C * np.sqrt(u), f"sqrt(C={C:g})")


def zero_modulus() -> OsgoodModulus:
    return OsgoodModulus(lambda t, u: np.zeros_like(u), "zero")


@dataclass(frozen=True)
class CoefficientHypotheses:
    eta: float
    modulus: OsgoodModulus
    p: float = 4.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"growth constant eta must be > 0, got {self.eta}")
        if not self.p > 2:
            raise ValueError(f"moment exponent p must be > 2, got {self.p}")


# --------------------------------------------------------------------------
# sampling


def sample_states(dim, T, n=1000, box=5.0, seed=0):
    rng = np.random.default_rng(seed)
    ts = rng.uniform(0.0, T, n)
    xs = rng.uniform(-box, box, (n, dim))
    return list(zip(ts, xs))


def sample_pairs(dim, T, n=1000, box=5.0, seed=0):
    rng = np.random.default_rng(seed)
    ts = rng.uniform(0.0, T, n)
    xs = rng.uniform(-box, box, (n, dim))
    # half the pairs are close, to probe the modulus near 0
    scale = np.where(np.arange(n) % 2 == 0, 2 * box, 10.0 ** rng.uniform(-6, 0, n))
    ys = xs + scale[:, None] * rng.uniform(-0.5, 0.5, (n, dim))
    return list(zip(ts, xs, ys))


@dataclass
class GrowthReport:
    n_samples: int
    violations: int
    worst_ratio: float
    worst_sample: tuple

    @property
    def passed(self):
        return self.violations == 0


@dataclass
class ModulusReport:
    n_pairs: int
    violations: int
    max_ratio: float
    worst_pair: tuple
    nonfinite: int = 0

    @property
    def passed(self):
        return self.violations == 0 and self.nonfinite == 0


def check_growth(F: MultiMap, hyp: CoefficientHypotheses, samples, tol=1e-9) -> GrowthReport:
    """Hausd({0}, F(t,x)) <= eta (1 + |x|) on each sample."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    origin = Point(np.zeros(F.codomain_dim))
    worst, worst_s, bad = -1.0, None, 0
    for t, x in samples:
        x = np.asarray(x, dtype=float)
        h = hausdorff_distance(origin, F(t, x), tol)
        ratio = h / (hyp.eta * (1.0 + float(np.linalg.norm(x))))
        if ratio > 1.0 + 1e-9:
            bad += 1
        if ratio > worst:
            worst, worst_s = ratio, (float(t), x)
    return GrowthReport(len(samples), bad, worst, worst_s)


def check_modulus(F: MultiMap, hyp: CoefficientHypotheses, pairs, tol=1e-12) -> ModulusReport:
    """Hausd(F(t,x), F(t,y))^p <= L(t, |x - y|^p) on each pair.

    A pair counts as a violation only beyond floating-point resolution of
    the Hausdorff distance; ``max_ratio`` is the raw largest ratio.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs")
    worst, worst_pair, bad, nonfinite = 0.0, pairs[0], 0, 0
    for t, x, y in pairs:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        h = hausdorff_distance(F(t, x), F(t, y), tol)
        lhs = h ** hyp.p
        rhs = float(hyp.modulus(t, float(np.linalg.norm(x - y)) ** hyp.p))
        if not math.isfinite(rhs):
            nonfinite += 1
            continue
        ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
        # h of nearby sets carries absolute rounding error from coordinates of size |x|
        slack = 1e-10 * (1.0 + float(np.linalg.norm(x)) + float(np.linalg.norm(y)))
        if max(h - slack, 0.0) ** hyp.p > rhs * (1 + 1e-9):
            bad += 1
        if ratio > worst:
            worst, worst_pair = ratio, (float(t), x, y)
    return ModulusReport(len(pairs), bad, worst, worst_pair, nonfinite)


# --------------------------------------------------------------------------
# Osgood implication


@dataclass
class OsgoodResult:
    limit_sup: float
    verdict: str
    iterations: int
    R0: float
    inflated: bool
    dominated: bool
    monotone: bool
    grid: np.ndarray
    iterate: np.ndarray
    history: list

    def __iter__(self):
        return iter((self.limit_sup, self.verdict))


def _picard(L, k, ts, R):
    vals = np.asarray(L(ts, R), dtype=float) * np.ones_like(ts)
    if not np.all(np.isfinite(vals)):
        raise ValueError("modulus returned non-finite values")
    h = np.diff(ts)
    out = np.zeros_like(ts)
    out[1:] = k * np.cumsum(0.5 * h * (vals[1:] + vals[:-1]))
    return out


def osgood_iterate(L: OsgoodModulus, k: float, T: float, R0: float, grid: int = 400,
                   iters: int = 60) -> OsgoodResult:
    """Decreasing Picard iteration R_{m+1}(t) = k int_0^t L(s, R_m(s)) ds.

    Started from a constant that dominates its first iterate, the sequence
    decreases to the maximal solution of R = k int L(s, R).  A positive
    limit is a nonzero solution, so the implication fails; a limit below
    1e-8 R0 is evidence (not proof) that it holds.  Integrals use the
    trapezoidal rule on ``grid`` intervals.

    If no doubling of R0 (at most 60) dominates the first iterate, the
    iteration runs from R0 itself with ``dominated`` False; the iterates
    may then rise before they fall, as for L(u) = C u with k C T > 1.
    """
    if not (k > 0 and T > 0 and R0 > 0):
        raise ValueError("k, T and R0 must be positive")
    ts = np.linspace(0.0, T, grid + 1)
    R0_used, inflated = float(R0), False
    R = np.full_like(ts, R0_used)
    first = _picard(L, k, ts, R)
    # a linear tail with k C T > 1 admits no dominating constant, hence the cap
    for _ in range(60):
        if np.all(first <= R0_used):
            break
        R0_used *= 2.0
        inflated = True
        R = np.full_like(ts, R0_used)
        first = _picard(L, k, ts, R)
    dominated = bool(np.all(first <= R0_used))
    if not dominated:
        # inflation did not help; iterate from the caller's constant instead
        R0_used, inflated = float(R0), False
        R = np.full_like(ts, R0_used)

    history = [float(R.max())]
    verdict = "inconclusive"
    monotone = True
    m = 0
    for m in range(1, iters + 1):
        nxt = _picard(L, k, ts, R)
        change = float(np.max(np.abs(nxt - R)))
        if m > 1:
            monotone &= bool(np.all(nxt <= R * (1 + 1e-12)))
        R = nxt
        top = float(R.max())
        history.append(top)
        if top <= 1e-8 * R0_used:
            verdict = "osgood_pass"
            break
        if top > 1e-4 * R0_used and change <= 1e-6 * top:
            verdict = "osgood_fail"
            break
    return OsgoodResult(float(R.max()), verdict, m, R0_used, inflated, dominated, monotone,
                        ts, R, history)


# --------------------------------------------------------------------------
# selectors


class SelectionError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class Selector:
    """A selection (t, x) -> value in F(t, x) under a fixed rule."""

    def __init__(self, F: MultiMap, rule):
        self.F = F
        self.rule = rule

    def __call__(self, t, x, step: int = 0, path: int = 0):
        return self.F.select(self.rule, t, np.atleast_2d(np.asarray(x, dtype=float)),
                             step, np.array([path]))[0]

    def batch(self, t, X, step=0, paths=None):
        return self.F.select(self.rule, t, X, step, paths)

    def certify(self, samples, tol=1e-6):
        """Largest distance from a selected value to its set over samples."""
        worst = 0.0
        for i, (t, x) in enumerate(samples):
            v = self(t, x, step=i, path=i)
            d, _ = distance_to_point(self.F(t, x), v, tol=tol / 4)
            worst = max(worst, d)
        if worst > tol:
            raise SelectionError(f"selector leaves the set by {worst:.3e} "
                                 f"({self.rule.name} rule on {self.F.description})", worst)
        return worst


def caratheodory_selector(F: MultiMap, rule=None, samples=None, tol=1e-6, T=1.0) -> Selector:
    """Selector for ``F`` under ``rule`` (Steiner point by default).

    Membership is certified on ``samples`` (32 random states by default).
    """
    rule = rule or Steiner()
    sel = Selector(F, rule)
    if samples is None:
        samples = sample_states(F.domain_dim, T, n=32, seed=12345)
    sel.certify(samples, tol)
    return sel
