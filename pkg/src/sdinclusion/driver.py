"""Seeded Brownian increments on uniform grids.

Every path owns a Philox stream keyed by ``(seed, path_index)``, so a path
can be regenerated alone and in any order.  Separate counter regions of the
same key feed the Brownian increments, the initial condition and the random
selection rule.

Increments are rounded to multiples of 2**-32.  With that granularity every
partial sum that can occur on a grid is exactly representable in double
precision, so coarsening by block sums and the terminal value W(T) do not
depend on summation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["BrownianPath", "generate", "generate_batch", "restrict", "stream",
           "keyed_normals", "grid_steps", "GridError", "QUANTUM"]

QUANTUM = 2.0 ** -32

REGION_BROWNIAN = 0
REGION_INITIAL = 1
REGION_SELECTION = 2


class GridError(ValueError):
    """A step does not divide the horizon, or a coarse step is not a multiple."""


def grid_steps(T: float, dt: float, what: str = "dt") -> int:
    if not (T > 0 and dt > 0):
        raise GridError(f"T and {what} must be positive")
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-12 * T:
        raise GridError(f"{what}={dt!r} does not divide T={T!r}")
    return steps


def stream(seed: int, path_index: int, region: int = REGION_BROWNIAN) -> np.random.Generator:
    """Counter-based generator for one path and one counter region."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, path_index], dtype=np.uint64)
    counter = np.array([0, 0, 0, region], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _increments(seed, path_index, steps, dH, dt):
    z = stream(seed, path_index).standard_normal((steps, dH))
    return np.round(z * (np.sqrt(dt) / QUANTUM)) * QUANTUM


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Increments of a dH-dimensional Brownian motion on a uniform grid."""

    dH: int
    T: float
    dt: float
    increments: np.ndarray
    seed: int
    path_index: int

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    def values(self) -> np.ndarray:
        """W at the grid nodes, W(0) = 0."""
        W = np.zeros((self.steps + 1, self.dH))
        np.cumsum(self.increments, axis=0, out=W[1:])
        return W


def generate(seed: int, path_index: int, dH: int, T: float, dt_fine: float) -> BrownianPath:
    steps = grid_steps(T, dt_fine)
    if dH < 1:
        raise ValueError("noise dimension must be positive")
    inc = _increments(seed, path_index, steps, dH, dt_fine)
    inc.setflags(write=False)
    return BrownianPath(dH, float(T), float(dt_fine), inc, int(seed), int(path_index))


def generate_batch(seed: int, path_indices, dH: int, T: float, dt: float) -> np.ndarray:
    """Increments for several paths, shape ``(paths, steps, dH)``."""
    steps = grid_steps(T, dt)
    path_indices = list(path_indices)
    out = np.empty((len(path_indices), steps, dH))
    for i, p in enumerate(path_indices):
        out[i] = _increments(seed, p, steps, dH, dt)
    return out


def coarsen(increments: np.ndarray, factor: int) -> np.ndarray:
    """Block sums of consecutive increments along the step axis."""
    if factor == 1:
        return increments
    steps = increments.shape[-2]
    if steps % factor:
        raise GridError(f"{steps} steps cannot be grouped in blocks of {factor}")
    shape = increments.shape[:-2] + (steps // factor, factor, increments.shape[-1])
    return increments.reshape(shape).sum(axis=-2)


def restrict(path: BrownianPath, dt_coarse: float) -> BrownianPath:
    """The same Brownian path seen on a coarser grid."""
    ratio = dt_coarse / path.dt
    factor = int(round(ratio))
    if factor < 1 or abs(factor - ratio) > 1e-9 * ratio:
        raise GridError(f"dt_coarse={dt_coarse!r} is not a multiple of dt={path.dt!r}")
    inc = coarsen(path.increments, factor)
    if inc is path.increments:
        return path
    inc.setflags(write=False)
    return BrownianPath(path.dH, path.T, path.dt * factor, inc, path.seed, path.path_index)


def _mix64(z):
    # SplitMix64 output function
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def keyed_normals(seed: int, paths, step: int, n: int, region: int = REGION_SELECTION):
    """Standard normals indexed by ``(seed, path, step, coordinate)``.

    A stateless hash (SplitMix64 mixing of the key) feeds a Box-Muller
    transform, so any entry can be produced on its own, vectorized over
    paths.  Returns shape ``(len(paths), n)``.
    """
    paths = np.asarray(paths, dtype=np.uint64).reshape(-1, 1)
    m = (n + 1) // 2
    with np.errstate(over="ignore"):
        h = _mix64(np.full(paths.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF)) ^ np.uint64(region))
        h = _mix64(h ^ paths)
        h = _mix64(h ^ np.uint64(step))
        j = np.arange(2 * m, dtype=np.uint64)[None, :]
        bits = _mix64(h ^ j) >> np.uint64(11)
    u = (bits.astype(float) + 0.5) * 2.0 ** -53
    u1, u2 = u[:, :m], u[:, m:]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)], axis=1)
    return z[:, :n]
