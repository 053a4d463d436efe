"""Dense operators on tensor products of spin-1/2 sites.

Operators are plain ``complex128`` numpy arrays of shape ``(2**n, 2**n)``.
Site 1 is the most significant qubit; ``|0>`` is spin up (``sigma_z = +1``).
The doubled register used by the interferometric protocol is laid out as
``(copy 1) x (copy 2) x (ancilla)``, so the ancilla is the least
significant qubit.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10

_max_dim = 1 << 14

PAULI = {
    "i": np.eye(2, dtype=np.complex128),
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


class DimensionError(MemoryError):
    """Raised instead of allocating an operator above the dimension cap."""


def max_dim():
    return _max_dim


def set_max_dim(dim):
    """Change the operator dimension cap; returns the previous value."""
    global _max_dim
    if dim < 2:
        raise ValueError("dimension cap must be at least 2")
    old, _max_dim = _max_dim, int(dim)
    return old


def check_dim(dim):
    if dim > _max_dim:
        raise DimensionError(
            f"operator dimension {dim} exceeds the cap {_max_dim}; "
            "raise it with set_max_dim() if the memory is really available"
        )
    return dim


def is_hermitian(a, tol=HERMITIAN_TOL):
    return a.shape[0] == a.shape[1] and np.max(np.abs(a - a.conj().T), initial=0.0) < tol


def is_unitary(a, tol=UNITARY_TOL):
    if a.shape[0] != a.shape[1]:
        return False
    return np.max(np.abs(a.conj().T @ a - np.eye(a.shape[0])), initial=0.0) < tol


def n_qubits(a):
    """Number of qubits an operator acts on; rejects non power-of-two shapes."""
    dim = a.shape[0]
    if a.ndim != 2 or a.shape[1] != dim or dim < 2 or dim & (dim - 1):
        raise ValueError(f"not a square operator on qubits: shape {a.shape}")
    return dim.bit_length() - 1


def identity(n):
    return np.eye(check_dim(1 << n), dtype=np.complex128)


def tensor(a, b, *rest):
    """Kronecker product with the first factor most significant."""
    ops = (a, b) + rest
    dim = reduce(lambda d, op: d * op.shape[0], ops, 1)
    check_dim(dim)
    return reduce(np.kron, ops).astype(np.complex128, copy=False)


def site_operator(n, site, axis):
    """``sigma^axis`` on ``site`` (1-based) of an ``n``-site register."""
    axis = axis.lower()
    if axis not in ("x", "y", "z"):
        raise ValueError(f"axis must be x, y or z, got {axis!r}")
    if not 1 <= site <= n:
        raise ValueError(f"site {site} out of range 1..{n}")
    check_dim(1 << n)
    left = np.eye(1 << (site - 1), dtype=np.complex128)
    right = np.eye(1 << (n - site), dtype=np.complex128)
    return np.kron(np.kron(left, PAULI[axis]), right)


@dataclass(frozen=True)
class RegisterLayout:
    """Two system copies of ``n_per_copy`` sites each plus one ancilla qubit."""

    n_per_copy: int

    def __post_init__(self):
        if self.n_per_copy < 1:
            raise ValueError("n_per_copy must be >= 1")

    @property
    def n_total(self):
        return 2 * self.n_per_copy + 1

    @property
    def dim(self):
        return 1 << self.n_total

    @property
    def copy_dim(self):
        return 1 << self.n_per_copy

    def qubit(self, copy, site):
        """0-based qubit index (from the most significant end) of a copy site."""
        if copy not in (1, 2):
            raise ValueError("copy must be 1 or 2")
        if not 1 <= site <= self.n_per_copy:
            raise ValueError(f"site {site} out of range 1..{self.n_per_copy}")
        return (copy - 1) * self.n_per_copy + site - 1

    @property
    def ancilla_qubit(self):
        return self.n_total - 1


def register_operator(layout, copy1, copy2, ancilla):
    """Assemble ``copy1 x copy2 x ancilla`` against a layout."""
    if copy1.shape[0] != layout.copy_dim or copy2.shape[0] != layout.copy_dim:
        raise ValueError("copy operators do not match the layout")
    return tensor(copy1, copy2, ancilla)


def swap_operator(layout, ancilla=True):
    """Permutation exchanging the two copies; identity on the ancilla.

    With ``ancilla=False`` the returned operator acts on the two copies only.
    """
    n = layout.n_per_copy
    extra = 1 if ancilla else 0
    dim = check_dim(1 << (2 * n + extra))
    idx = np.arange(dim)
    low = idx & ((1 << extra) - 1)
    rest = idx >> extra
    a = rest >> n
    b = rest & ((1 << n) - 1)
    target = (((b << n) | a) << extra) | low
    s = np.zeros((dim, dim), dtype=np.complex128)
    s[target, idx] = 1.0
    return s
