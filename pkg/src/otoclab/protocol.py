"""Density-matrix simulation of the ancilla + two-copy interferometer.

Register: ``(copy 1) x (copy 2) x (ancilla)``, ancilla least significant,
``|up> = |0>``. The circuit is

    rho(0) = rho_{beta/2} x rho_{beta/2} x |+><+|
    G      = CW_up . (U x U x 1) . CV_down,      U = exp(-iHt)

with ``CV_down`` applying ``V`` to both copies when the ancilla is down
(before the evolution) and ``CW_up`` applying ``W`` when it is up (after).
Reading out ``sigma_x x SWAP`` and ``sigma_y x SWAP`` on ``G rho G^dag``
gives ``Re F2(t)`` and ``Im F2(t)``. Swapping the two control states yields
the complex conjugate.

This module deliberately does not use :mod:`otoclab.spectral`: thermal
states and propagators come from ``scipy.linalg.expm`` so the simulation is
an independent check on the eigenbasis formulas in
:mod:`otoclab.correlators`. The two copies evolve under ``H x 1 + 1 x H``
with no cross-copy coupling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .spinspace import (
    PAULI,
    RegisterLayout,
    identity,
    is_hermitian,
    is_unitary,
    n_qubits,
    site_operator,
    swap_operator,
    tensor,
)

MAX_SITES_PER_COPY = 5

UP = np.array([[1, 0], [0, 0]], dtype=np.complex128)
DOWN = np.array([[0, 0], [0, 1]], dtype=np.complex128)
_PROJECTORS = {"up": UP, "down": DOWN}
_PLUS = np.full((2, 2), 0.5, dtype=np.complex128)


@dataclass(frozen=True, eq=False)
class ProtocolRun:
    """One interferometer shot configuration.

    ``v_axis``/``w_axis`` of ``None`` make that probe the identity.
    ``infinite_copy`` prepares copy 2 at infinite temperature and copy 1 at
    the full ``beta``.
    """

    hamiltonian: np.ndarray
    beta: float
    v_site: int
    w_site: int
    t: float
    v_axis: str | None = "z"
    w_axis: str | None = "z"
    infinite_copy: bool = False

    def __post_init__(self):
        n = n_qubits(self.hamiltonian)
        if n > MAX_SITES_PER_COPY:
            raise ValueError(
                f"protocol simulation is limited to {MAX_SITES_PER_COPY} sites per copy "
                f"({2 * MAX_SITES_PER_COPY + 1}-qubit register), got {n}"
            )
        # a one-site copy has nowhere else to put W; it takes a different axis instead
        if self.v_site == self.w_site and (n > 1 or self.v_axis == self.w_axis):
            raise ValueError("probe sites must differ")
        if not np.isfinite(self.t):
            raise ValueError("evolution time must be finite")
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError("beta must be finite and >= 0")

    @property
    def layout(self):
        return RegisterLayout(n_qubits(self.hamiltonian))


def _probe(n, site, axis):
    if axis is None:
        return identity(n)
    return site_operator(n, site, axis)


def controlled_probe(layout, probe, condition):
    """``|c><c| x P x P + |c'><c'| x 1 x 1`` with copies ahead of the ancilla."""
    if condition not in _PROJECTORS:
        raise ValueError("condition must be 'up' or 'down'")
    if probe.shape != (layout.copy_dim, layout.copy_dim):
        raise ValueError("probe does not act on a single copy of this layout")
    if not (is_hermitian(probe) and is_unitary(probe)):
        raise ValueError("controlled probes must be Hermitian and unitary")
    on = _PROJECTORS[condition]
    off = _PROJECTORS["down" if condition == "up" else "up"]
    eye = identity(layout.n_per_copy)
    return tensor(probe, probe, on) + tensor(eye, eye, off)


def _gibbs(h, beta):
    if beta == 0:
        return identity(n_qubits(h)) / h.shape[0]
    shift = np.min(np.linalg.eigvalsh(h))
    rho = scipy.linalg.expm(-beta * (h - shift * np.eye(h.shape[0])))
    return rho / np.trace(rho)


def _readout_operators(layout):
    s = swap_operator(layout, ancilla=False)
    return tensor(s, PAULI["x"]), tensor(s, PAULI["y"])


class _Circuit:
    """Time-independent pieces of a run: initial state, controlled probes, readouts."""

    def __init__(self, run):
        h = np.asarray(run.hamiltonian, dtype=np.complex128)
        layout = run.layout
        n = layout.n_per_copy
        if run.infinite_copy:
            rho1, rho2 = _gibbs(h, run.beta), _gibbs(h, 0.0)
        else:
            rho1 = rho2 = _gibbs(h, run.beta / 2)
        self.h = h
        self.rho0 = tensor(rho1, rho2, _PLUS)
        self.cv = controlled_probe(layout, _probe(n, run.v_site, run.v_axis), "down")
        self.cw = controlled_probe(layout, _probe(n, run.w_site, run.w_axis), "up")
        self.ox, self.oy = _readout_operators(layout)
        self.scale = layout.copy_dim if run.infinite_copy else 1.0
        # Tr[CW U sigma U^dag CW^dag O] = Tr[U sigma U^dag (CW^dag O CW)]
        self.sigma = self.cv @ self.rho0 @ self.cv.conj().T
        self.ox_w = self.cw.conj().T @ self.ox @ self.cw
        self.oy_w = self.cw.conj().T @ self.oy @ self.cw
        self.d = h.shape[0]

    def state(self, t):
        u = scipy.linalg.expm(-1j * t * self.h)
        g = self.cw @ tensor(u, u, PAULI["i"]) @ self.cv
        return g @ self.rho0 @ g.conj().T, g

    def _apply_copies(self, u, m):
        """``(U x U x 1) m`` through two reshaped matrix products."""
        d = self.d
        y = (u @ m.reshape(d, -1)).reshape(d, d, -1)
        return np.matmul(u, y).reshape(m.shape)

    def _evolve_copies(self, u):
        """``(U x U x 1) sigma (U x U x 1)^dag``."""
        left = self._apply_copies(u, self.sigma)
        return self._apply_copies(u, left.conj().T).conj().T

    def readout(self, t):
        x = self._evolve_copies(scipy.linalg.expm(-1j * t * self.h))
        # Tr[X O] as an elementwise sum; both operators are Hermitian
        re = np.vdot(self.ox_w, x).real
        im = np.vdot(self.oy_w, x).real
        return float(re * self.scale), float(im * self.scale)


def evolved_register_state(run):
    """``G rho(0) G^dag`` for a run, plus the circuit unitary ``G``."""
    return _Circuit(run).state(run.t)


def run_protocol(run):
    """Simulated ``(<sigma_x x S>, <sigma_y x S>)``; equals ``(Re F2, Im F2)``."""
    return _Circuit(run).readout(run.t)


def protocol_infinite_copy(run):
    """Unregulated ``F(t)`` at ``run.beta`` from an infinite-temperature copy 2.

    The raw readout is ``F(t) / 2^n``; the factor is divided out.
    """
    if not run.infinite_copy:
        run = ProtocolRun(run.hamiltonian, run.beta, run.v_site, run.w_site, run.t,
                          run.v_axis, run.w_axis, infinite_copy=True)
    return run_protocol(run)


def protocol_series(hamiltonian, beta, v_site, w_site, times, v_axis="z", w_axis="z",
                    infinite_copy=False):
    """Complex ``re + i im`` readout over a time grid."""
    times = np.asarray(times, dtype=np.float64)
    first = float(times[0]) if times.size else 0.0
    circuit = _Circuit(ProtocolRun(hamiltonian, beta, v_site, w_site, first, v_axis, w_axis,
                                   infinite_copy))
    vals = []
    for t in times:
        if not np.isfinite(t):
            raise ValueError("evolution time must be finite")
        re, im = circuit.readout(float(t))
        vals.append(re + 1j * im)
    return np.array(vals, dtype=np.complex128)


def sample_protocol(run, shots, seed):
    """Finite-shot estimate of both readouts.

    ``sigma_{x,y} x S`` have eigenvalues +-1, so each shot is a Bernoulli
    draw with ``P(+1) = (1 + <O>) / 2``. Returns estimates and their
    standard errors (in the same normalization as :func:`run_protocol`).
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    re, im = run_protocol(run)
    scale = run.layout.copy_dim if run.infinite_copy else 1.0
    rng = np.random.Generator(np.random.PCG64(seed))
    out = {}
    for name, val in (("re", re), ("im", im)):
        mean = float(np.clip(val / scale, -1.0, 1.0))
        k = rng.binomial(shots, (1.0 + mean) / 2.0)
        est = 2.0 * k / shots - 1.0
        out[name] = est * scale
        out[f"{name}_stderr"] = float(np.sqrt(max(1.0 - est**2, 0.0) / shots)) * scale
    out["shots"] = shots
    return out
