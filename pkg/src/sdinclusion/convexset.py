"""Nonempty compact convex subsets of R^d.

Bodies are built from a small closed grammar (points, balls, polytopes given
by vertices, Minkowski sums, nonnegative scalings, translations).  Every
operation only needs the support function or its maximizer, and every body
normalizes to a polytope plus a ball, ``conv(V) + r*B``, which is what the
distance and Hausdorff routines work with.

Hilbert-Schmidt valued sets (values of the diffusion coefficient) are plain
bodies in R^{dE*dH}: a dE x dH matrix is flattened row-major and the
Frobenius inner product becomes the Euclidean one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.stats import norm, qmc

__all__ = [
    "ConvexBody",
    "Point",
    "Ball",
    "Hull",
    "MinkowskiSum",
    "Scaled",
    "Translated",
    "Direction",
    "QuadratureSpec",
    "DimensionError",
    "ConvergenceError",
    "HausdorffBudgetError",
    "SteinerCertificationError",
    "support_value",
    "support_values",
    "support_point",
    "support_points",
    "distance_to_point",
    "hausdorff_distance",
    "steiner_point",
    "flatten_hs",
    "unflatten_hs",
]

# Upper bound on the number of candidate vertices when a Minkowski sum of
# polytopes is expanded into vertex form.
MINKOWSKI_VERTEX_BUDGET = 250_000

_UNIT_TOL = 1e-12


class DimensionError(ValueError):
    """Operands live in different ambient dimensions."""


class ConvergenceError(RuntimeError):
    """The point-to-body distance solver hit its iteration cap."""

    def __init__(self, message, best_gap):
        super().__init__(message)
        self.best_gap = best_gap


class HausdorffBudgetError(ValueError):
    """The requested tolerance cannot be certified for this pair of bodies."""


class SteinerCertificationError(RuntimeError):
    """The quadrature estimate of the Steiner point was not certified in K."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _frozen(x, ndim=1):
    a = np.array(x, dtype=float)
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite coordinates")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Direction:
    """A unit vector, the argument of support functions."""

    u: np.ndarray

    def __post_init__(self):
        u = _frozen(self.u)
        n = float(np.linalg.norm(u))
        if abs(n - 1.0) > _UNIT_TOL:
            raise ValueError(f"direction must have unit norm, got {n!r}")
        object.__setattr__(self, "u", u)

    @classmethod
    def of(cls, v) -> "Direction":
        """Normalize a nonzero vector."""
        v = np.asarray(v, dtype=float)
        n = np.linalg.norm(v)
        if n == 0 or not np.isfinite(n):
            raise ValueError("cannot normalize a zero or non-finite vector")
        return cls(v / n)

    @property
    def dim(self) -> int:
        return self.u.shape[0]


def _as_unit(u) -> np.ndarray:
    if isinstance(u, Direction):
        return u.u
    return Direction(u).u


@dataclass(frozen=True)
class QuadratureSpec:
    """Sphere quadrature budget for Steiner points in dimension >= 3.

    ``nodes`` directions are used (rounded up to an even number, the node set
    is closed under u -> -u) and the estimate must lie within ``tol`` of the
    body.
    """

    nodes: int = 4096
    tol: float = 1e-6

    def __post_init__(self):
        if self.nodes < 2:
            raise ValueError("need at least two quadrature nodes")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


# --------------------------------------------------------------------------
# the grammar


class ConvexBody:
    """Base class of the body grammar.  Instances are immutable."""

    dim: int

    def _support_values(self, U: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _support_points(self, U: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _canonical(self) -> tuple[np.ndarray, float]:
        raise NotImplementedError

    @cached_property
    def canonical(self) -> tuple[np.ndarray, float]:
        """``(V, r)`` with the body equal to ``conv(V) + r*B``.

        ``V`` holds the extreme points of the polytope part, sorted
        lexicographically.
        """
        V, r = self._canonical()
        V = _lexsorted(_extreme_points(V))
        V.setflags(write=False)
        return V, float(r)

    @cached_property
    def _facets(self):
        return _facet_equations(self.canonical[0])

    @property
    def kind(self) -> str:
        return type(self).__name__

    def __add__(self, other):
        if not isinstance(other, ConvexBody):
            return NotImplemented
        return MinkowskiSum(self, other)

    def __rmul__(self, factor):
        return Scaled(float(factor), self)


@dataclass(frozen=True, eq=False)
class Point(ConvexBody):
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", _frozen(self.c))

    @property
    def dim(self):
        return self.c.shape[0]

    def _support_values(self, U):
        return U @ self.c

    def _support_points(self, U):
        return np.broadcast_to(self.c, U.shape).copy()

    def _canonical(self):
        return self.c[None, :], 0.0


@dataclass(frozen=True, eq=False)
class Ball(ConvexBody):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center))
        r = float(self.radius)
        if not (r >= 0 and math.isfinite(r)):
            raise ValueError(f"ball radius must be a finite nonnegative number, got {r!r}")
        object.__setattr__(self, "radius", r)

    @property
    def dim(self):
        return self.center.shape[0]

    def _support_values(self, U):
        return U @ self.center + self.radius * np.linalg.norm(U, axis=1)

    def _support_points(self, U):
        n = np.linalg.norm(U, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            W = np.where(n > 0, U / n, 0.0)
        return self.center + self.radius * W

    def _canonical(self):
        return self.center[None, :], self.radius


@dataclass(frozen=True, eq=False)
class Hull(ConvexBody):
    vertices: np.ndarray

    def __post_init__(self):
        V = _frozen(self.vertices, ndim=2)
        if V.shape[0] == 0 or V.shape[1] == 0:
            raise ValueError("hull needs a nonempty vertex list of positive dimension")
        object.__setattr__(self, "vertices", V)

    @property
    def dim(self):
        return self.vertices.shape[1]

    @cached_property
    def _lex(self):
        return _lexsorted(self.vertices)

    def _support_values(self, U):
        return np.max(U @ self.vertices.T, axis=1)

    def _support_points(self, U):
        V = self._lex
        vals = U @ V.T
        vmax = vals.max(axis=1, keepdims=True)
        slack = 1e-12 * np.maximum(1.0, np.abs(vmax))
        # first maximizer in lexicographic order
        idx = np.argmax(vals >= vmax - slack, axis=1)
        return V[idx].copy()

    def _canonical(self):
        return self.vertices, 0.0


@dataclass(frozen=True, eq=False)
class MinkowskiSum(ConvexBody):
    left: ConvexBody
    right: ConvexBody

    def __post_init__(self):
        if self.left.dim != self.right.dim:
            raise DimensionError(
                f"Minkowski sum of bodies in R^{self.left.dim} and R^{self.right.dim}")

    @property
    def dim(self):
        return self.left.dim

    def _support_values(self, U):
        return self.left._support_values(U) + self.right._support_values(U)

    def _support_points(self, U):
        return self.left._support_points(U) + self.right._support_points(U)

    def _canonical(self):
        V1, r1 = self.left.canonical
        V2, r2 = self.right.canonical
        if V1.shape[0] * V2.shape[0] > MINKOWSKI_VERTEX_BUDGET:
            raise HausdorffBudgetError(
                f"MinkowskiSum({self.left.kind}, {self.right.kind}) expands to "
                f"{V1.shape[0] * V2.shape[0]} candidate vertices "
                f"(budget {MINKOWSKI_VERTEX_BUDGET})")
        V = (V1[:, None, :] + V2[None, :, :]).reshape(-1, self.dim)
        return V, r1 + r2


@dataclass(frozen=True, eq=False)
class Scaled(ConvexBody):
    factor: float
    body: ConvexBody

    def __post_init__(self):
        f = float(self.factor)
        if not (f >= 0 and math.isfinite(f)):
            raise ValueError(f"scale factor must be finite and >= 0, got {f!r}")
        object.__setattr__(self, "factor", f)

    @property
    def dim(self):
        return self.body.dim

    def _support_values(self, U):
        return self.factor * self.body._support_values(U)

    def _support_points(self, U):
        return self.factor * self.body._support_points(U)

    def _canonical(self):
        V, r = self.body.canonical
        return self.factor * V, self.factor * r


@dataclass(frozen=True, eq=False)
class Translated(ConvexBody):
    offset: np.ndarray
    body: ConvexBody

    def __post_init__(self):
        v = _frozen(self.offset)
        if v.shape[0] != self.body.dim:
            raise DimensionError(
                f"offset of length {v.shape[0]} for a body in R^{self.body.dim}")
        object.__setattr__(self, "offset", v)

    @property
    def dim(self):
        return self.body.dim

    def _support_values(self, U):
        return U @ self.offset + self.body._support_values(U)

    def _support_points(self, U):
        return self.offset + self.body._support_points(U)

    def _canonical(self):
        V, r = self.body.canonical
        return V + self.offset, r


# --------------------------------------------------------------------------
# polytope helpers


def _lexsorted(V):
    V = np.asarray(V, dtype=float)
    order = np.lexsort(V.T[::-1])
    return V[order]


def _hull2d(P):
    """Andrew's monotone chain.  Counter-clockwise, no collinear vertices."""
    pts = sorted(set(map(tuple, np.asarray(P, dtype=float))))
    if len(pts) <= 2:
        return np.array(pts, dtype=float)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def _affine_frame(P, rtol=1e-12):
    """Origin, orthonormal basis (rows) and rank of the affine hull of P."""
    P = np.asarray(P, dtype=float)
    origin = P.mean(axis=0)
    Q = P - origin
    scale = max(1.0, float(np.abs(P).max()))
    if P.shape[0] == 1:
        return origin, np.zeros((0, P.shape[1])), 0
    _, s, Vt = np.linalg.svd(Q, full_matrices=False)
    k = int(np.sum(s > rtol * scale * max(P.shape)))
    return origin, Vt[:k], k


def _extreme_points(P):
    """Extreme points of conv(P), robust to lower-dimensional point sets."""
    P = np.unique(np.asarray(P, dtype=float), axis=0)
    if P.shape[0] <= 1:
        return P
    d = P.shape[1]
    if d == 1:
        return np.array([[P.min()], [P.max()]]) if P.min() < P.max() else P[:1]
    if d == 2:
        return _hull2d(P)
    origin, B, k = _affine_frame(P)
    if k == 0:
        return P[:1]
    if k < d:
        Y = (P - origin) @ B.T
        keep = _extreme_points(Y)
        return keep @ B + origin
    try:
        return P[np.sort(ConvexHull(P).vertices)]
    except QhullError:
        return P


def _facet_equations(V):
    """Outward unit normals N and offsets b (x in conv(V) iff N x <= b).

    Returns ``None`` when conv(V) has empty interior.
    """
    d = V.shape[1]
    if V.shape[0] <= d:
        return None
    if d == 1:
        lo, hi = float(V.min()), float(V.max())
        return np.array([[-1.0], [1.0]]), np.array([-lo, hi])
    if d == 2:
        C = _hull2d(V)
        if C.shape[0] < 3:
            return None
        E = np.roll(C, -1, axis=0) - C
        N = np.column_stack([E[:, 1], -E[:, 0]])
        N /= np.linalg.norm(N, axis=1, keepdims=True)
        return N, np.einsum("ij,ij->i", N, C)
    _, _, k = _affine_frame(V)
    if k < d:
        return None
    try:
        eq = ConvexHull(V).equations
    except QhullError:
        return None
    return eq[:, :-1], -eq[:, -1]


def _depth(v, facets):
    """Distance from an interior point v to the boundary; 0 when flat."""
    if facets is None:
        return 0.0
    N, b = facets
    return float(np.min(b - N @ v))


def _min_norm_point(Q, tol, max_iter):
    """Wolfe's min-norm-point algorithm on conv(rows of Q).

    A fully corrective Frank-Wolfe method: the linear oracle is the support
    point of the polytope, and the iterate is re-optimized over the affine
    hull of the active vertices.  Returns the point, the active indices,
    their weights and the final gap in distance units.
    """
    sq = np.einsum("ij,ij->i", Q, Q)
    S = [int(np.argmin(sq))]
    w = np.array([1.0])
    y = Q[S[0]].copy()
    gap = math.inf
    for _ in range(max_iter):
        ny = math.sqrt(float(y @ y))
        if ny <= tol:
            return y, S, w, ny
        vals = Q @ y
        j = int(np.argmin(vals))
        gap = (float(y @ y) - float(vals[j])) / ny
        if gap <= tol or j in S:
            return y, S, w, gap
        S.append(j)
        w = np.append(w, 0.0)
        while True:
            QS = Q[S]
            k = len(S)
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = QS @ QS.T
            K[:k, k] = 1.0
            K[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            alpha = np.linalg.lstsq(K, rhs, rcond=None)[0][:k]
            if np.all(alpha > 1e-15):
                w = alpha
                y = alpha @ QS
                break
            neg = alpha <= 1e-15
            theta = float(np.min(w[neg] / (w[neg] - alpha[neg])))
            w = w + theta * (alpha - w)
            keep = w > 1e-15
            keep[np.argmax(w)] = True
            S = [s for s, kk in zip(S, keep) if kk]
            w = w[keep] / w[keep].sum()
            y = w @ Q[S]
    raise ConvergenceError(
        f"min-norm-point iteration cap {max_iter} reached (gap {gap:.3e})", gap)


def _default_max_iter(d, tol):
    return int(min(max(100, 10 * d / tol), 10_000))


def _polytope_distance(V, x, tol, max_iter=None):
    if max_iter is None:
        max_iter = _default_max_iter(V.shape[1], tol)
    if V.shape[0] == 1:
        diff = V[0] - x
        return float(np.linalg.norm(diff)), V[0].copy()
    y, _, _, _ = _min_norm_point(V - x, tol, max_iter)
    return float(np.linalg.norm(y)), y + x


# --------------------------------------------------------------------------
# public operations


def _check_dim(K, n, what="vector"):
    if n != K.dim:
        raise DimensionError(f"{what} of length {n} for a body in R^{K.dim}")


def support_value(K: ConvexBody, u) -> float:
    """h_K(u) = max over x in K of <x, u>."""
    u = _as_unit(u)
    _check_dim(K, u.shape[0], "direction")
    return float(K._support_values(u[None, :])[0])


def support_values(K: ConvexBody, U) -> np.ndarray:
    """Support function at each row of U (rows need not be unit)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    _check_dim(K, U.shape[1], "direction")
    return K._support_values(U)


def support_point(K: ConvexBody, u) -> np.ndarray:
    """A maximizer of <x, u> over K.

    Ties between polytope vertices go to the lexicographically smallest one,
    so the choice is deterministic.
    """
    u = _as_unit(u)
    _check_dim(K, u.shape[0], "direction")
    return K._support_points(u[None, :])[0]


def support_points(K: ConvexBody, U) -> np.ndarray:
    U = np.atleast_2d(np.asarray(U, dtype=float))
    _check_dim(K, U.shape[1], "direction")
    return K._support_points(U)


def distance_to_point(K: ConvexBody, x, tol: float = 1e-9, max_iter=None):
    """Distance from ``x`` to ``K`` and a witness point of ``K``.

    The polytope part is handled by a fully corrective Frank-Wolfe method
    (Wolfe's min-norm point) whose linear oracle is ``support_point``.  It
    stops once the duality gap, expressed in distance units, drops below
    ``tol``; the returned distance is then within ``tol`` of the true one and
    equals ``|x - witness|``.

    Raises
    ------
    ConvergenceError
        If the iteration cap is hit; ``best_gap`` carries the last gap.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=float)
    _check_dim(K, x.shape[0], "point")
    V, r = K.canonical
    dP, y = _polytope_distance(V, x, tol, max_iter)
    if dP <= tol and _depth(x, K._facets) >= 0 and K._facets is not None:
        # interior of a full-dimensional polytope: report an exact zero
        return 0.0, x.copy()
    if dP <= r:
        return 0.0, x.copy()
    witness = y + (r / dP) * (x - y)
    return float(np.linalg.norm(x - witness)), witness


def _excess(K1, K2, tol):
    """sup over x in K1 of d(x, K2), both bodies in canonical form."""
    V1, r1 = K1.canonical
    V2, r2 = K2.canonical
    rho = r1 - r2
    worst = 0.0
    for v in V1:
        dv, _ = _polytope_distance(V2, v, tol)
        if rho <= 0:
            val = dv + rho
        elif dv > tol:
            val = dv + rho
        else:
            # v sits in P2; the farthest point of the ball around v is
            # reached through the nearest facet
            val = rho - max(_depth(v, K2._facets), 0.0)
        worst = max(worst, val)
    return worst


def hausdorff_distance(K1: ConvexBody, K2: ConvexBody, tol: float = 1e-9) -> float:
    """Hausdorff distance max(sup_{a in K1} d(a,K2), sup_{b in K2} d(b,K1)).

    Both bodies are reduced to ``conv(V) + r*B``.  Cancelling the common
    ball part leaves a polytope against a polytope inflated by the radius
    difference; since distance to a convex set is convex, the outer sup is
    attained over the vertices of the first polytope, and for a vertex
    inside the other polytope the excess of the ball around it is the
    radius difference minus the vertex depth.  The result is within ``tol``
    of the exact value.
    """
    if K1.dim != K2.dim:
        raise DimensionError(f"bodies in R^{K1.dim} and R^{K2.dim}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    try:
        e12 = _excess(K1, K2, tol)
        e21 = _excess(K2, K1, tol)
    except HausdorffBudgetError as exc:
        raise HausdorffBudgetError(
            f"tolerance {tol:g} not achievable for the pair ({K1.kind}, {K2.kind}): {exc}"
        ) from exc
    return max(e12, e21)


# --------------------------------------------------------------------------
# Steiner point


def _steiner_polygon(C):
    """Exterior-angle weighted vertex average of a CCW convex polygon."""
    prev = C - np.roll(C, 1, axis=0)
    nxt = np.roll(C, -1, axis=0) - C
    a_in = np.arctan2(prev[:, 1], prev[:, 0])
    a_out = np.arctan2(nxt[:, 1], nxt[:, 0])
    turn = np.mod(a_out - a_in, 2 * np.pi)
    w = turn / turn.sum()
    return w @ C


def _sphere_nodes(d, nodes):
    half = (nodes + 1) // 2
    if d == 3:
        i = np.arange(half) + 0.5
        z = 1.0 - 2.0 * i / half
        rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = np.pi * (1.0 + math.sqrt(5.0)) * i
        U = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    else:
        m = 1 << max(1, math.ceil(math.log2(half)))
        pts = qmc.Sobol(d, scramble=True, seed=20240521).random(m)[:half]
        G = norm.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
        U = G / np.linalg.norm(G, axis=1, keepdims=True)
    return np.vstack([U, -U])


def _steiner_points_set(P, quad):
    """Steiner point of conv(P), computed in its affine hull."""
    P = np.unique(np.asarray(P, dtype=float), axis=0)
    if P.shape[0] == 1:
        return P[0].copy()
    origin, B, k = _affine_frame(P)
    if k == 0:
        return P.mean(axis=0)
    Y = (P - origin) @ B.T
    if k == 1:
        s = 0.5 * (Y.min() + Y.max())
        return origin + s * B[0]
    if k == 2:
        return origin + _steiner_polygon(_hull2d(Y)) @ B
    U = _sphere_nodes(k, quad.nodes)
    h = np.max(U @ Y.T, axis=1)
    s = k * (h @ U) / U.shape[0]
    return origin + s @ B


def _steiner(K, quad):
    if isinstance(K, Point):
        return K.c.copy()
    if isinstance(K, Ball):
        return K.center.copy()
    if isinstance(K, Translated):
        return K.offset + _steiner(K.body, quad)
    if isinstance(K, Scaled):
        return K.factor * _steiner(K.body, quad)
    if isinstance(K, MinkowskiSum):
        return _steiner(K.left, quad) + _steiner(K.right, quad)
    if isinstance(K, Hull):
        cache = K.__dict__.setdefault("_steiner_cache", {})
        if quad.nodes not in cache:
            cache[quad.nodes] = _steiner_points_set(K.vertices, quad)
        return cache[quad.nodes].copy()
    raise TypeError(f"no Steiner rule for {K.kind}")


def steiner_point(K: ConvexBody, quad: QuadratureSpec | None = None,
                  certify: bool = True) -> np.ndarray:
    """Steiner point of K.

    Exact for points, balls and polytopes of intrinsic dimension <= 2
    (exterior-angle formula); Minkowski additive and equivariant under
    translation and scaling by construction.  Polytopes of intrinsic
    dimension >= 3 use ``d * mean(u * h_K(u))`` over a symmetric node set
    (Fibonacci lattice on S^2, scrambled Sobol directions above).

    With ``certify`` the result is checked to lie within ``quad.tol`` of K.
    """
    quad = quad or QuadratureSpec()
    s = _steiner(K, quad)
    if certify:
        residual, _ = distance_to_point(K, s, tol=quad.tol / 4)
        if residual > quad.tol:
            raise SteinerCertificationError(
                f"Steiner estimate lies {residual:.3e} outside the body "
                f"with {quad.nodes} quadrature nodes", residual)
    return s


# --------------------------------------------------------------------------


def flatten_hs(M) -> np.ndarray:
    """Row-major flattening of a dE x dH matrix (Frobenius isometry)."""
    return np.asarray(M, dtype=float).reshape(-1)


def unflatten_hs(v, dE: int, dH: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(dE, dH)
