"""Matrix semigroups S(t) = exp(tA) and their growth envelope.

A finite-dimensional generator stands in for the unbounded operator of the
infinite-dimensional problem (Galerkin truncation).  The exponential is
computed by scaling and squaring with a Pade approximant.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

__all__ = [
    "SemigroupOperator",
    "evolve",
    "yosida",
    "growth_envelope",
    "zero",
    "scaled_identity",
    "shift_nilpotent",
    "rotation2d",
]


def _square_matrix(A):
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"generator must be a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("generator has non-finite entries")
    A.setflags(write=False)
    return A


@dataclass(frozen=True, eq=False)
class SemigroupOperator:
    """Generator A together with constants M >= 1, omega such that
    ||exp(tA)|| <= M exp(omega t).

    Use :meth:`from_matrix` to fit the constants; passing ``M`` and
    ``omega`` directly skips the fit.
    """

    A: np.ndarray
    M: float = 1.0
    omega: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "A", _square_matrix(self.A))
        if not self.M >= 1:
            raise ValueError(f"growth constant M must be >= 1, got {self.M}")

    @classmethod
    def from_matrix(cls, A, T: float = 1.0, grid: int = 64) -> "SemigroupOperator":
        op = cls(A)
        M, omega, _ = growth_envelope(op, T, grid)
        return cls(op.A, M, omega)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def propagator(self, t: float) -> np.ndarray:
        """exp(tA), memoized by t."""
        t = float(t)
        if not t >= 0:
            raise ValueError(f"semigroup is only defined for t >= 0, got {t}")
        S = self._cache.get(t)
        if S is None:
            S = expm(t * self.A)
            S.setflags(write=False)
            with self._lock:
                S = self._cache.setdefault(t, S)
        return S

    def C_B(self, t: float) -> float:
        """sup over 0 <= s <= t of M exp(omega s)."""
        return self.M * max(1.0, math.exp(self.omega * t))


def evolve(op: SemigroupOperator, t: float, x) -> np.ndarray:
    """Apply S(t) to a vector or to each row of a batch."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("state has non-finite entries")
    if x.shape[-1] != op.dim:
        raise ValueError(f"state of length {x.shape[-1]} for a generator of size {op.dim}")
    S = op.propagator(t)
    return apply(S, x)


def apply(S: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``X @ S.T`` with a per-row summation order independent of batch size."""
    return np.sum(X[..., None, :] * S, axis=-1)


def yosida(op: SemigroupOperator, n: int) -> SemigroupOperator:
    """Yosida approximant A_n = n A (nI - A)^{-1}.

    Requires ``n > omega``.  The envelope constants of the input are kept,
    which is the uniform bound Yosida approximants inherit for n large.
    """
    if n <= 0 or int(n) != n:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    if not n > op.omega:
        raise ValueError(f"Yosida index n={n} must exceed the growth exponent {op.omega:g}")
    I = np.eye(op.dim)
    R = n * I - op.A
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(f"nI - A is singular for n={n}")
    An = n * np.linalg.solve(R.T, op.A.T).T
    return SemigroupOperator(An, op.M, op.omega)


def growth_envelope(op: SemigroupOperator, T: float, grid: int = 64):
    """Fit (M, omega) with ||exp(tA)|| <= M exp(omega t) on [0, T].

    omega is the spectral abscissa; M is the largest value of
    ||exp(tA)|| exp(-omega t) on ``grid`` + 1 equispaced times, with 5%
    headroom whenever it exceeds 1 (transient growth of a non-normal A).
    Returns ``(M, omega, C_B)`` where ``C_B(t) = sup_{s<=t} M exp(omega s)``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if grid < 1:
        raise ValueError("grid must be a positive integer")
    A = op.A
    omega = float(np.max(np.linalg.eigvals(A).real)) if A.size else 0.0
    if abs(omega) < 1e-13:
        omega = 0.0
    ts = np.linspace(0.0, T, grid + 1)
    ratio = max(np.linalg.norm(expm(t * A), 2) * math.exp(-omega * t) for t in ts)
    M = 1.0 if ratio <= 1.0 + 1e-9 else 1.05 * ratio

    def C_B(t, M=M, omega=omega):
        return M * max(1.0, math.exp(omega * t))

    return M, omega, C_B


# named generators used by the scenario grammar

def zero(d: int) -> np.ndarray:
    return np.zeros((d, d))


def scaled_identity(d: int, lam: float) -> np.ndarray:
    return lam * np.eye(d)


def shift_nilpotent(d: int) -> np.ndarray:
    return np.eye(d, k=1)


def rotation2d(theta_rate: float) -> np.ndarray:
    return np.array([[0.0, -theta_rate], [theta_rate, 0.0]])
