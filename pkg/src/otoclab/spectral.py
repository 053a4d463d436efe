"""Exact diagonalization and quantities derived from one eigendecomposition.

Units: hbar = k_B = 1. Times are in units of 1/J and temperatures in units
of J, so ``beta`` is measured in 1/J.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .spinspace import is_hermitian

_HERMITIAN_INPUT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Ascending eigenvalues and column eigenvectors of a Hermitian operator.

    ``eigenvectors`` is real whenever the input had no imaginary part, which
    lets the correlator kernels use real matrix products.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self):
        return self.eigenvalues.shape[0]

    @property
    def is_real(self):
        return not np.iscomplexobj(self.eigenvectors)

    def to_eigenbasis(self, op):
        u = self.eigenvectors
        if self.is_real and not np.any(np.imag(op)):
            op = np.ascontiguousarray(np.real(op))
        return u.conj().T @ op @ u

    def from_eigenbasis(self, op):
        u = self.eigenvectors
        return u @ op @ u.conj().T

    def reconstruct(self):
        return self.from_eigenbasis(np.diag(self.eigenvalues).astype(np.complex128))


@dataclass(frozen=True, eq=False)
class ThermalState:
    rho: np.ndarray
    beta: float
    partition_log: float


def diagonalize(h):
    """Dense Hermitian eigendecomposition (LAPACK ``*syevd``/``*heevd``)."""
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    if not is_hermitian(h, tol=_HERMITIAN_INPUT_TOL * max(1.0, np.max(np.abs(h), initial=0.0))):
        raise ValueError("diagonalize() needs a Hermitian operator")
    if np.iscomplexobj(h) and np.all(h.imag == 0):
        h = h.real
    try:
        evals, evecs = scipy.linalg.eigh(h, driver="evd")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise np.linalg.LinAlgError(f"eigensolver failed: {exc}") from exc
    return SpectralDecomposition(eigenvalues=evals, eigenvectors=evecs)


def boltzmann_weights(spec, beta):
    """Eigenbasis populations at inverse temperature ``beta`` and ``log Z``.

    ``log Z`` is taken after shifting the ground energy to zero.
    """
    beta = float(beta)
    if not np.isfinite(beta) or beta < 0:
        raise ValueError(f"beta must be finite and >= 0, got {beta}")
    e = spec.eigenvalues - spec.eigenvalues[0]
    w = np.exp(-beta * e)
    z = w.sum()
    return w / z, float(np.log(z))


def thermal_state(spec, beta):
    p, log_z = boltzmann_weights(spec, beta)
    u = spec.eigenvectors
    rho = (u * p) @ u.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return ThermalState(rho=rho.astype(np.complex128, copy=False), beta=float(beta),
                        partition_log=log_z)


def propagator(spec, t):
    """``exp(-i H t)`` assembled from the cached eigenbasis."""
    u = spec.eigenvectors
    return (u * np.exp(-1j * spec.eigenvalues * t)) @ u.conj().T


def heisenberg(spec, op, t):
    """``exp(iHt) op exp(-iHt)``."""
    if op.shape != (spec.dim, spec.dim):
        raise ValueError(f"operator shape {op.shape} does not match dimension {spec.dim}")
    u = propagator(spec, t)
    return u.conj().T @ op @ u


def renyi2(rho):
    """Purity ``Tr rho^2``; the second Renyi entropy is ``-log`` of this."""
    tr = np.trace(rho)
    if abs(tr - 1) > 1e-8:
        raise ValueError(f"density matrix trace is {tr}, expected 1")
    # Tr[rho^2] = sum_ab rho_ab rho_ba = sum |rho_ab|^2 for Hermitian rho
    return float(np.real(np.sum(rho * rho.T)))
