"""Binary ensemble files.

Layout (all little-endian):

    offset  size  field
    0       4     magic b"SDIE"
    4       1     format version (1)
    5       3     zero padding
    8       8     paths            uint64
    16      8     steps            uint64 (grid has steps + 1 nodes)
    24      4     dE               uint32
    28      4     dH               uint32
    32      8     n                int64, -1 for a lag-free ensemble
    40      8     dt               float64
    48      8     T                float64
    56      8     seed             uint64
    64      16    scenario hash    ASCII
    80      8*paths                path indices, int64
    ...     8*paths*(steps+1)*dE   trajectories, float64, row-major [path, node, coord]

Increments are not stored; they are regenerated from (seed, path index).
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["MAGIC", "VERSION", "write_ensemble", "read_ensemble", "EnsembleFileError",
           "StoredEnsemble"]

MAGIC = b"SDIE"
VERSION = 1
_HEADER = struct.Struct("<4sB3xQQIIqddQ16s")


class EnsembleFileError(OSError):
    pass


class StoredEnsemble:
    def __init__(self, n, dt, T, seed, dH, scenario_hash, path_indices, trajectories):
        self.n = n
        self.dt = dt
        self.T = T
        self.seed = seed
        self.dH = dH
        self.scenario_hash = scenario_hash
        self.path_indices = path_indices
        self.trajectories = trajectories

    @property
    def paths(self):
        return self.trajectories.shape[0]

    @property
    def steps(self):
        return self.trajectories.shape[1] - 1

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)


def write_ensemble(path, ens, dH):
    P, nodes, dE = ens.trajectories.shape
    h = ens.scenario_hash.encode("ascii")[:16].ljust(16, b"\0")
    header = _HEADER.pack(MAGIC, VERSION, P, nodes - 1, dE, dH,
                          -1 if ens.n is None else int(ens.n), float(ens.dt), float(ens.T),
                          int(ens.seed), h)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ens.path_indices, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(ens.trajectories, dtype="<f8").tobytes())


def read_ensemble(path) -> StoredEnsemble:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise EnsembleFileError(f"{path}: truncated header")
    magic, version, P, steps, dE, dH, n, dt, T, seed, h = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise EnsembleFileError(f"{path}: not an ensemble file")
    if version != VERSION:
        raise EnsembleFileError(f"{path}: unsupported format version {version}")
    body = P * 8 + P * (steps + 1) * dE * 8
    if len(data) != _HEADER.size + body:
        raise EnsembleFileError(f"{path}: expected {_HEADER.size + body} bytes, "
                                f"found {len(data)}")
    off = _HEADER.size
    idx = np.frombuffer(data, dtype="<i8", count=P, offset=off).astype(np.int64)
    traj = np.frombuffer(data, dtype="<f8", count=P * (steps + 1) * dE, offset=off + 8 * P)
    traj = traj.reshape(P, steps + 1, dE).astype(float)
    return StoredEnsemble(None if n < 0 else n, dt, T, seed, dH,
                          h.rstrip(b"\0").decode("ascii"), idx, traj)
