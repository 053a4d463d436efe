"""Thermal correlators of single disorder realizations and ensemble averages.

All correlators are evaluated in the eigenbasis of ``H``, where every thermal
density matrix is diagonal. One eigendecomposition serves every time point
and every ``beta``. For Hermitian probes the per-time cost is one product
``B = W(t) V`` (two real matrix products when the eigenvectors are real)
plus O(D^2) reductions:

    F(t)  = Tr[rho W(t) V W(t) V]         = sum_ab p_a B_ab B_ba
    F2(t) = Tr[q W(t) V q W(t) V]         = sum_ab q_a B_ab q_b B_ba
    C(t)  = Tr[rho K^dag K],  K = B - B^dag = [W(t), V]
    C2(t) = -Tr[q K q K]

with ``p`` the populations at ``beta`` and ``q`` those at ``beta/2``.
Normalized C2 and F2 divide by the purity ``Tr q^2``.

R(t) is the real part of the thermal two-point function
``Tr[rho sz_i(t) sz_i]``.
"""
from __future__ import annotations

import logging
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .hamiltonians import CouplingMatrix, TfskParams, build_tfsk, tfsk_realization
from .spectral import boltzmann_weights, diagonalize
from .spinspace import is_hermitian, is_unitary, site_operator

log = logging.getLogger(__name__)

REAL_KINDS = frozenset({"R", "C", "C2", "C2_normalized"})
KINDS = REAL_KINDS | {"F", "F2", "F2_normalized", "F2_protocol"}
_FOUR_POINT = ("F", "F2", "F2_normalized", "C", "C2", "C2_normalized")
_IMAG_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    kind: str
    beta: float
    realization_seed: int | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.complex128)
        if self.kind not in KINDS:
            raise ValueError(f"unknown correlator kind {self.kind!r}")
        if times.ndim != 1 or values.shape != times.shape:
            raise ValueError("times and values must be 1-D of equal length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly ascending")
        if not np.all(np.isfinite(values)):
            raise ValueError("correlator values must be finite")
        if self.kind in REAL_KINDS and np.max(np.abs(values.imag), initial=0.0) >= _IMAG_TOL:
            raise ValueError(f"{self.kind} must be real; imaginary part {np.abs(values.imag).max():.3g}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_realizations: int
    kind: str
    beta: float
    base_seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if np.any(np.asarray(self.stderr) < 0):
            raise ValueError("stderr must be non-negative")


class RealizationError(RuntimeError):
    def __init__(self, seed, cause):
        super().__init__(f"disorder realization with seed {seed} failed: {cause!r}")
        self.seed = seed
        self.cause = cause


@dataclass(frozen=True)
class FixedModel:
    """A coupling matrix that does not change between realizations."""

    couplings: CouplingMatrix
    gamma: float

    @property
    def n(self):
        return self.couplings.n


def default_times(points=200, t_min=0.05, t_max=100.0, kind="log", include_zero=True):
    if points < 1 or t_max <= t_min or t_min < 0:
        raise ValueError("invalid time grid")
    if kind == "log":
        if t_min <= 0:
            raise ValueError("a logarithmic grid needs t_min > 0")
        grid = np.geomspace(t_min, t_max, points)
    elif kind == "linear":
        grid = np.linspace(t_min, t_max, points)
    else:
        raise ValueError(f"time grid kind must be 'log' or 'linear', got {kind!r}")
    if include_zero and grid[0] > 0:
        grid = np.concatenate([[0.0], grid])
    return grid


def _betas(beta):
    b = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    if b.ndim != 1:
        raise ValueError("beta must be a scalar or 1-D sequence")
    return b


def _weights(spec, betas):
    return np.array([boltzmann_weights(spec, b)[0] for b in betas])


def _check_probe(op, dim, name):
    if op.shape != (dim, dim):
        raise ValueError(f"probe {name} has shape {op.shape}, expected {(dim, dim)}")
    if not is_unitary(op):
        raise ValueError(f"probe {name} must be unitary")


def evaluate_four_point(spec, w, v, beta, times, kinds=_FOUR_POINT, check_probes=True):
    """All requested four-point correlators on a ``(len(beta), len(times))`` grid."""
    kinds = tuple(kinds)
    unknown = set(kinds) - set(_FOUR_POINT)
    if unknown:
        raise ValueError(f"not four-point kinds: {sorted(unknown)}")
    dim = spec.dim
    if check_probes:
        _check_probe(w, dim, "W")
        _check_probe(v, dim, "V")
    betas = _betas(beta)
    times = np.asarray(times, dtype=np.float64)
    energies = spec.eigenvalues

    p = _weights(spec, betas)
    q = _weights(spec, betas / 2)
    ones = np.ones_like(p)
    purity = np.sum(q * q, axis=1)

    w_e = spec.to_eigenbasis(w)
    v_e = spec.to_eigenbasis(v)
    hermitian = is_hermitian(w) and is_hermitian(v)
    real_path = hermitian and not np.iscomplexobj(w_e) and not np.iscomplexobj(v_e)
    need_k = any(k.startswith("C") for k in kinds)

    out = {k: np.empty((len(betas), len(times)), dtype=np.complex128) for k in kinds}
    for it, t in enumerate(times):
        if hermitian:
            if real_path:
                c, s = kernels.dress_real(w_e, energies, t)
                br, bi = c @ v_e, s @ v_e
            else:
                b = kernels.dress_complex(w_e, energies, t) @ v_e
                br, bi = b.real, b.imag
            f, f2, c_val, c2 = kernels.hermitian_reductions(br, bi, p, q)
        else:
            w_t = kernels.dress_complex(w_e, energies, t)
            w_t_dag = w_t.conj().T
            v_dag = v_e.conj().T
            b = w_t @ v_e
            f = kernels.pair_trace(w_t_dag @ v_dag, b, p, ones) if "F" in out else None
            f2 = kernels.pair_trace(w_t_dag @ v_e, w_t @ v_dag, q, q)
            if need_k:
                k_mat = b - v_e @ w_t
                c_val = kernels.pair_trace(k_mat.conj().T, k_mat, p, ones)
                c2 = -kernels.pair_trace(k_mat, k_mat, q, q)

        if "F" in out:
            out["F"][:, it] = f
        if "F2" in out:
            out["F2"][:, it] = f2
        if "F2_normalized" in out:
            out["F2_normalized"][:, it] = f2 / purity
        if "C" in out:
            out["C"][:, it] = c_val
        if "C2" in out:
            out["C2"][:, it] = c2
        if "C2_normalized" in out:
            out["C2_normalized"][:, it] = c2 / purity
    return out


def evaluate_autocorrelation(spec, op, beta, times):
    """``Re Tr[rho op(t) op]`` on a ``(len(beta), len(times))`` grid."""
    betas = _betas(beta)
    times = np.asarray(times, dtype=np.float64)
    if op.shape != (spec.dim, spec.dim):
        raise ValueError("operator does not match the Hamiltonian dimension")
    p = _weights(spec, betas)
    o_e = spec.to_eigenbasis(op)
    g = o_e * o_e.T
    energies = spec.eigenvalues
    phase = np.exp(1j * np.outer(energies, times))
    y = g @ phase.conj()
    return np.real(p @ (phase * y))


def _series(values, times, kind, beta, seed):
    return TimeSeries(times=times, values=values, kind=kind, beta=float(beta), realization_seed=seed)


def _site_z(spec, site):
    n = spec.dim.bit_length() - 1
    return site_operator(n, site, "z")


def autocorrelation(spec, beta, site, times, seed=None):
    values = evaluate_autocorrelation(spec, _site_z(spec, site), beta, times)[0]
    return _series(values, times, "R", beta, seed)


def otoc_f(spec, beta, w, v, times, seed=None):
    values = evaluate_four_point(spec, w, v, beta, times, ("F",))["F"][0]
    return _series(values, times, "F", beta, seed)


def scrambling_c(spec, beta, i, j, times, seed=None):
    if i == j:
        raise ValueError("C(t) needs distinct probe sites")
    w = _site_z(spec, i)
    v = _site_z(spec, j)
    values = evaluate_four_point(spec, w, v, beta, times, ("C",))["C"][0]
    return _series(values, times, "C", beta, seed)


def regulated_f2(spec, beta, w, v, times, normalized=False, seed=None):
    """Regulated OTOC with ``rho_{beta/2}`` between each operator pair.

    ``normalized=True`` returns ``F2 Z(beta/2)^2 / Z(beta)``, i.e. the
    ``Tr[sqrt(rho) W(t)^dag V^dag sqrt(rho) W(t) V]`` form.
    """
    kind = "F2_normalized" if normalized else "F2"
    values = evaluate_four_point(spec, w, v, beta, times, (kind,))[kind][0]
    return _series(values, times, kind, beta, seed)


def regulated_c2(spec, beta, w, v, times, seed=None):
    """Raw and purity-normalized C2 series as a pair."""
    res = evaluate_four_point(spec, w, v, beta, times, ("C2", "C2_normalized"))
    return (_series(res["C2"][0], times, "C2", beta, seed),
            _series(res["C2_normalized"][0], times, "C2_normalized", beta, seed))


# ---------------------------------------------------------------------------
# disorder ensembles


def realization_hamiltonian(model, seed):
    if isinstance(model, TfskParams):
        return tfsk_realization(model, seed)[1]
    if isinstance(model, FixedModel):
        return build_tfsk(model.couplings, model.gamma)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def realization_correlators(model, seed, kinds, betas, times, w_site=1, v_site=None, r_site=None):
    """Every requested kind for one realization, as ``{kind: (n_beta, n_t)}``."""
    n = model.n
    v_site = n if v_site is None else v_site
    r_site = w_site if r_site is None else r_site
    h = realization_hamiltonian(model, seed)
    out = {}
    four = [k for k in kinds if k in _FOUR_POINT]
    spec = None
    if four or "R" in kinds:
        spec = diagonalize(h)
    if four:
        if w_site == v_site:
            raise ValueError("probe sites must differ")
        w = site_operator(n, w_site, "z")
        v = site_operator(n, v_site, "z")
        out.update(evaluate_four_point(spec, w, v, betas, times, four, check_probes=False))
    if "R" in kinds:
        out["R"] = evaluate_autocorrelation(spec, site_operator(n, r_site, "z"), betas, times)
    if "F2_protocol" in kinds:
        from .protocol import protocol_series

        out["F2_protocol"] = np.array(
            [protocol_series(h, b, v_site=v_site, w_site=w_site, times=times) for b in betas]
        )
    for kind in REAL_KINDS.intersection(out):
        imag = np.max(np.abs(out[kind].imag), initial=0.0) if np.iscomplexobj(out[kind]) else 0.0
        if imag >= _IMAG_TOL:
            raise ValueError(f"{kind} has imaginary part {imag:.3g}")
        out[kind] = np.real(out[kind])
    return out


def _model_params(model):
    if isinstance(model, TfskParams):
        return {"model": "tfsk", "n": model.n, "j_scale": model.j_scale, "gamma": model.gamma}
    return {"model": "fixed", "n": model.n, "gamma": model.gamma,
            "couplings": model.couplings.to_dict()}


def ensemble_run(model, kinds, betas, times, n_realizations, base_seed, *, w_site=1,
                 v_site=None, r_site=None, threads=1, progress=None):
    """Disorder-average several kinds at several temperatures in one pass.

    Realization ``k`` uses seed ``base_seed + k``. Realizations may run on a
    thread pool, but the reduction is always in realization order so the
    output does not depend on ``threads``.

    Returns ``{(kind, beta): EnsembleResult}``.
    """
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    kinds = tuple(kinds)
    unknown = set(kinds) - KINDS
    if unknown:
        raise ValueError(f"unknown kinds {sorted(unknown)}")
    betas = _betas(betas)
    times = np.asarray(times, dtype=np.float64)
    seeds = [base_seed + k for k in range(n_realizations)]

    def one(seed):
        try:
            return realization_correlators(model, seed, kinds, betas, times, w_site, v_site, r_site)
        except Exception as exc:  # noqa: BLE001 - re-raised with the seed attached
            raise RealizationError(seed, exc) from exc

    results = [None] * n_realizations
    start = _time.perf_counter()
    if threads <= 1:
        for idx, seed in enumerate(seeds):
            results[idx] = one(seed)
            if progress:
                progress(idx + 1, n_realizations, _time.perf_counter() - start)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(one, s) for s in seeds]
            for idx, fut in enumerate(futures):
                results[idx] = fut.result()
                if progress:
                    progress(idx + 1, n_realizations, _time.perf_counter() - start)

    params = _model_params(model)
    params.update(w_site=w_site, v_site=model.n if v_site is None else v_site,
                  r_site=w_site if r_site is None else r_site)
    out = {}
    for kind in kinds:
        stack = np.stack([r[kind] for r in results])  # (n_real, n_beta, n_t)
        mean = stack.mean(axis=0)
        if n_realizations > 1:
            var = stack.real.var(axis=0, ddof=1) + stack.imag.var(axis=0, ddof=1)
            stderr = np.sqrt(var / n_realizations)
        else:
            stderr = np.zeros(mean.shape)
        if kind in REAL_KINDS:
            mean = mean.real.astype(np.complex128)
        for ib, b in enumerate(betas):
            out[(kind, float(b))] = EnsembleResult(
                times=times, mean=mean[ib], stderr=stderr[ib], n_realizations=n_realizations,
                kind=kind, beta=float(b), base_seed=base_seed, params=dict(params),
            )
    return out


def ensemble_average(params, kind, beta, times, n_realizations, base_seed, **kwargs):
    return ensemble_run(params, (kind,), (beta,), times, n_realizations, base_seed,
                        **kwargs)[(kind, float(beta))]
