"""Disorder sampling and the transverse-field Sherrington-Kirkpatrick model.

    H = -1/2 sum_{i != j} J_ij sz_i sz_j - gamma sum_j sx_j

Couplings are Gaussian with zero mean and standard deviation ``J / sqrt(N)``.
The source writes this width as a "variance sigma = sqrt(J^2/N)"; the
expression is the square root of a variance, so it is used as the standard
deviation here.

Random numbers come from numpy's PCG64 bit generator seeded with the
realization seed, and normals from ``Generator.standard_normal`` (ziggurat).
Upper-triangle entries are drawn in row-major order ``(1,2), (1,3), ...,
(2,3), ...``. The stream is platform independent for a fixed numpy version.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .spinspace import check_dim


@dataclass(frozen=True)
class TfskParams:
    n: int
    j_scale: float = 1.0
    gamma: float = 1.35

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.j_scale < 0:
            raise ValueError("j_scale must be >= 0")


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """Symmetric Ising couplings with zero diagonal, plus their provenance."""

    n: int
    j: np.ndarray
    seed: int | None = None
    j_scale: float | None = None

    def __post_init__(self):
        j = np.asarray(self.j, dtype=np.float64)
        if j.shape != (self.n, self.n):
            raise ValueError(f"coupling matrix must be {self.n}x{self.n}, got {j.shape}")
        if np.any(np.diag(j) != 0) or np.any(j != j.T):
            raise ValueError("couplings must be exactly symmetric with zero diagonal")
        j.setflags(write=False)
        object.__setattr__(self, "j", j)

    def to_dict(self):
        return {
            "n": self.n,
            "seed": self.seed,
            "j_scale": self.j_scale,
            "rows": [[float(x) for x in row] for row in self.j],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(n=int(d["n"]), j=np.array(d["rows"], dtype=np.float64).reshape(d["n"], d["n"]),
                   seed=d.get("seed"), j_scale=d.get("j_scale"))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def sample_couplings(n, j_scale, seed):
    if n < 2:
        raise ValueError("need at least two spins to sample couplings")
    if j_scale < 0:
        raise ValueError("j_scale must be >= 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    iu = np.triu_indices(n, 1)
    draws = rng.standard_normal(len(iu[0])) * (j_scale / np.sqrt(n))
    j = np.zeros((n, n))
    j[iu] = draws
    j = j + j.T
    return CouplingMatrix(n=n, j=j, seed=seed, j_scale=float(j_scale))


def ising_energies(couplings):
    """Diagonal of the zz part: ``-sum_{i<k} J_ik s_i s_k`` per basis state."""
    return kernels.ising_diagonal(couplings.j, couplings.n)


def build_tfsk(couplings, gamma):
    n = couplings.n
    dim = check_dim(1 << n)
    h = np.zeros((dim, dim), dtype=np.complex128)
    idx = np.arange(dim)
    h[idx, idx] = ising_energies(couplings)
    for site in range(n):
        h[idx, idx ^ (1 << (n - 1 - site))] -= gamma
    return h


def tfsk_realization(params, seed):
    """Sample couplings for one disorder realization and build its Hamiltonian."""
    if params.n == 1:
        couplings = CouplingMatrix(n=1, j=np.zeros((1, 1)), seed=seed, j_scale=params.j_scale)
    else:
        couplings = sample_couplings(params.n, params.j_scale, seed)
    return couplings, build_tfsk(couplings, params.gamma)


@dataclass(frozen=True)
class RydbergCouplingSpec:
    positions: tuple
    c6_eff: float
    blockade_radius: float

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(float(r) for r in self.positions))
        if self.blockade_radius <= 0:
            raise ValueError("blockade_radius must be > 0")
        if len(set(self.positions)) != len(self.positions):
            raise ValueError("Rydberg positions must be pairwise distinct")


def rydberg_couplings(spec):
    """Soft-core dressed couplings ``C6 / (|r_i - r_j|^6 + a_B^6)``."""
    r = np.asarray(spec.positions)
    n = len(r)
    if n < 1:
        raise ValueError("need at least one position")
    sep = r[:, None] - r[None, :]
    j = spec.c6_eff / (sep**6 + spec.blockade_radius**6)
    np.fill_diagonal(j, 0.0)
    j = 0.5 * (j + j.T)
    return CouplingMatrix(n=n, j=j, seed=None, j_scale=None)
