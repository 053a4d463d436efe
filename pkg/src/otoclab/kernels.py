"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time. Set ``OTOCLAB_DISABLE_NUMBA=1``
to force the numpy implementations (useful for debugging and for the
benchmark in ``benchmarks/bench_kernels.py``). Both backends are always
importable through :data:`BACKENDS` so they can be compared directly.

Kernels:

``ising_diagonal(j, n)``
    classical energies ``-sum_{i<k} J_ik z_i z_k`` for every basis state,
    with site 1 on the most significant bit and ``z = +1`` for bit 0.
``dress_real(op, energies, t)``
    ``(op * cos(dE t), op * sin(dE t))`` with ``dE_ab = E_a - E_b``, for a
    real operator in the eigenbasis. Their sum ``c + i s`` is the Heisenberg
    picture operator ``e^{iHt} op e^{-iHt}`` expressed in the eigenbasis.
``dress_complex(op, energies, t)``
    same, complex output for a complex operator.
``pair_trace(a, b, p, q)``
    ``out[k] = sum_{ab} p[k, a] a[a, b] q[k, b] b[b, a]`` for a stack of
    diagonal weight vectors; this is every thermal four-point trace once
    the density matrices are diagonal.
``hermitian_reductions(br, bi, p, q)``
    fused special case for Hermitian probes, where ``B = br + i bi`` is
    ``W(t) V`` and the commutator is ``K = B - B^dag``. Returns the four
    stacks ``sum p_a B_ab B_ba``, ``sum q_a q_b B_ab B_ba``,
    ``sum p_a |K_ab|^2`` and ``sum q_a q_b |K_ab|^2`` without forming ``K``.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLE_FLAG = "OTOCLAB_DISABLE_NUMBA"


def _flag_set(name):
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


# ---------------------------------------------------------------------------
# numpy reference implementations


def _np_ising_diagonal(j, n):
    dim = 1 << n
    states = np.arange(dim, dtype=np.int64)
    z = 1.0 - 2.0 * ((states[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1)
    upper = np.triu(j, 1)
    return -np.einsum("si,ik,sk->s", z, upper, z)


def _np_dress_real(op, energies, t):
    c = np.cos(energies * t)
    s = np.sin(energies * t)
    cos_d = np.outer(c, c) + np.outer(s, s)
    sin_d = np.outer(s, c) - np.outer(c, s)
    return op * cos_d, op * sin_d


def _np_dress_complex(op, energies, t):
    ph = np.exp(1j * energies * t)
    return ph[:, None] * op * ph.conj()[None, :]


def _np_pair_trace(a, b, p, q):
    g = a * b.T
    return np.einsum("ka,ab,kb->k", p, g, q)


def _np_hermitian_reductions(br, bi, p, q):
    b = br + 1j * bi
    g = b * b.T
    k2 = np.abs(b - b.T.conj()) ** 2
    f = p @ g.sum(axis=1)
    f2 = np.sum((q @ g) * q, axis=1)
    c = p @ k2.sum(axis=1)
    c2 = np.sum((q @ k2) * q, axis=1)
    return f, f2, c.astype(np.complex128), c2.astype(np.complex128)


# ---------------------------------------------------------------------------
# numba implementations

if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def _nb_ising_diagonal(j, n):
        dim = 1 << n
        out = np.empty(dim)
        for s in range(dim):
            e = 0.0
            for i in range(n):
                zi = 1.0 - 2.0 * ((s >> (n - 1 - i)) & 1)
                for k in range(i + 1, n):
                    zk = 1.0 - 2.0 * ((s >> (n - 1 - k)) & 1)
                    e -= j[i, k] * zi * zk
            out[s] = e
        return out

    @_jit
    def _nb_dress_real(op, energies, t):
        d = energies.shape[0]
        c = np.cos(energies * t)
        s = np.sin(energies * t)
        re = np.empty((d, d))
        im = np.empty((d, d))
        for a in range(d):
            ca = c[a]
            sa = s[a]
            for b in range(d):
                x = op[a, b]
                re[a, b] = x * (ca * c[b] + sa * s[b])
                im[a, b] = x * (sa * c[b] - ca * s[b])
        return re, im

    @_jit
    def _nb_dress_complex(op, energies, t):
        d = energies.shape[0]
        ph = np.exp(1j * energies * t)
        out = np.empty((d, d), dtype=np.complex128)
        for a in range(d):
            pa = ph[a]
            for b in range(d):
                out[a, b] = pa * op[a, b] * np.conj(ph[b])
        return out

    @_jit
    def _nb_pair_trace_impl(a, b, p, q):
        k_count = p.shape[0]
        d = a.shape[0]
        out = np.zeros(k_count, dtype=np.complex128)
        for i in range(d):
            for k_ in range(d):
                g = a[i, k_] * b[k_, i]
                for k in range(k_count):
                    out[k] += p[k, i] * g * q[k, k_]
        return out

    _TILE = 64

    @_jit
    def _nb_hermitian_reductions(br, bi, p, q):
        d = br.shape[0]
        nk = p.shape[0]
        f = np.zeros(nk, dtype=np.complex128)
        f2 = np.zeros(nk, dtype=np.complex128)
        c = np.zeros(nk)
        c2 = np.zeros(nk)
        for a0 in range(0, d, _TILE):
            a1 = min(a0 + _TILE, d)
            for b0 in range(a0, d, _TILE):
                b1 = min(b0 + _TILE, d)
                for a in range(a0, a1):
                    start = a if b0 == a0 else b0
                    for b in range(start, b1):
                        xr = br[a, b]
                        xi = bi[a, b]
                        yr = br[b, a]
                        yi = bi[b, a]
                        # B_ab B_ba and |B_ab - conj(B_ba)|^2
                        gr = xr * yr - xi * yi
                        gi = xr * yi + xi * yr
                        kr = xr - yr
                        ki = xi + yi
                        k2 = kr * kr + ki * ki
                        if a == b:
                            for k in range(nk):
                                pa = p[k, a]
                                qa = q[k, a]
                                f[k] += pa * (gr + 1j * gi)
                                f2[k] += qa * qa * (gr + 1j * gi)
                                c[k] += pa * k2
                                c2[k] += qa * qa * k2
                        else:
                            for k in range(nk):
                                ps = p[k, a] + p[k, b]
                                qq = 2.0 * q[k, a] * q[k, b]
                                f[k] += ps * (gr + 1j * gi)
                                f2[k] += qq * (gr + 1j * gi)
                                c[k] += ps * k2
                                c2[k] += qq * k2
        return f, f2, c.astype(np.complex128), c2.astype(np.complex128)

    def _nb_pair_trace(a, b, p, q):
        return _nb_pair_trace_impl(
            np.ascontiguousarray(a, dtype=np.complex128),
            np.ascontiguousarray(b, dtype=np.complex128),
            np.ascontiguousarray(p, dtype=np.float64),
            np.ascontiguousarray(q, dtype=np.float64),
        )


BACKENDS = {
    "numpy": SimpleNamespace(
        ising_diagonal=_np_ising_diagonal,
        dress_real=_np_dress_real,
        dress_complex=_np_dress_complex,
        pair_trace=_np_pair_trace,
        hermitian_reductions=_np_hermitian_reductions,
    )
}
if numba is not None:
    BACKENDS["numba"] = SimpleNamespace(
        ising_diagonal=_nb_ising_diagonal,
        dress_real=_nb_dress_real,
        dress_complex=_nb_dress_complex,
        pair_trace=_nb_pair_trace,
        hermitian_reductions=_nb_hermitian_reductions,
    )

BACKEND = "numba" if ("numba" in BACKENDS and not _flag_set(_DISABLE_FLAG)) else "numpy"
_active = BACKENDS[BACKEND]


def ising_diagonal(j, n):
    return _active.ising_diagonal(np.ascontiguousarray(j, dtype=np.float64), int(n))


def dress_real(op, energies, t):
    return _active.dress_real(
        np.ascontiguousarray(op, dtype=np.float64),
        np.ascontiguousarray(energies, dtype=np.float64),
        float(t),
    )


def dress_complex(op, energies, t):
    return _active.dress_complex(
        np.ascontiguousarray(op, dtype=np.complex128),
        np.ascontiguousarray(energies, dtype=np.float64),
        float(t),
    )


def pair_trace(a, b, p, q):
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    return _active.pair_trace(a, b, p, q)


def hermitian_reductions(br, bi, p, q):
    return _active.hermitian_reductions(
        np.ascontiguousarray(br, dtype=np.float64),
        np.ascontiguousarray(bi, dtype=np.float64),
        np.ascontiguousarray(np.atleast_2d(p), dtype=np.float64),
        np.ascontiguousarray(np.atleast_2d(q), dtype=np.float64),
    )
