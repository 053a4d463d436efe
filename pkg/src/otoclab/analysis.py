"""Dissipation times, the phenomenological scrambling fit, and the bound table.

The fit model is

    C_f(t) = 2 * (e^{lam t} / N_c / (1 + e^{lam t} / N_c)) ** (2 delta)
           = 2 * exp(-2 delta * log(1 + N_c e^{-lam t}))

which grows as ``e^{2 delta lam t}`` at early times and saturates at 2.
Curves at several temperatures are fitted jointly with one ``lam`` per curve
and shared ``N_c`` and ``delta``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

DEFAULT_THRESHOLD = 0.05
DEFAULT_PLATEAU_FRACTION = 0.9
MIN_WINDOW_POINTS = 8


class NoDissipationError(ValueError):
    """The autocorrelation never dropped below the threshold on the grid."""


class SingularFitError(np.linalg.LinAlgError):
    """The normal matrix is singular at the end point of the fit.

    ``best`` holds the parameters reached when the degeneracy was detected
    (``lambdas``, ``n_c``, ``delta``, ``chi2``), or None if it was detected at
    the start point.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


def cf_model(t, lam, n_c, delta):
    t = np.asarray(t, dtype=np.float64)
    x = math.log(n_c) - lam * t
    return 2.0 * np.exp(-2.0 * delta * np.logaddexp(0.0, x))


def cf_jacobian(t, lam, n_c, delta):
    """Columns ``d C_f / d(lam, log N_c, log delta)``."""
    t = np.asarray(t, dtype=np.float64)
    x = math.log(n_c) - lam * t
    soft = np.logaddexp(0.0, x)
    sig = expit(x)
    f = 2.0 * np.exp(-2.0 * delta * soft)
    return np.stack([2.0 * delta * t * sig * f, -2.0 * delta * sig * f, -2.0 * delta * soft * f],
                    axis=-1)


def _real_values(series):
    vals = getattr(series, "mean", None)
    if vals is None:
        vals = series.values
    return np.real(np.asarray(vals))


def dissipation_time(series, threshold=DEFAULT_THRESHOLD):
    """First time ``|R|`` falls below ``threshold``, linearly interpolated."""
    t = np.asarray(series.times, dtype=np.float64)
    r = np.abs(_real_values(series))
    if abs(r[0] - 1.0) > 1e-6:
        raise ValueError(f"autocorrelation must start at 1, got {r[0]}")
    below = np.nonzero(r < threshold)[0]
    if below.size == 0:
        raise NoDissipationError(
            f"|R(t)| stays above {threshold} up to t={t[-1]:g}; no dissipation detected"
        )
    i = below[0]
    t0, t1, r0, r1 = t[i - 1], t[i], r[i - 1], r[i]
    return float(t0 + (r0 - threshold) * (t1 - t0) / (r0 - r1))


def late_plateau(series, tail_fraction=0.1):
    vals = _real_values(series)
    k = max(1, int(round(tail_fraction * len(vals))))
    return float(np.mean(vals[-k:]))


def default_window(c_series, t_d, plateau_fraction=DEFAULT_PLATEAU_FRACTION):
    """``[t_d, first time C reaches plateau_fraction of its late-time plateau]``."""
    t = np.asarray(c_series.times)
    c = _real_values(c_series)
    target = plateau_fraction * late_plateau(c_series)
    hits = np.nonzero((t > t_d) & (c >= target))[0]
    t_hi = float(t[hits[0]]) if hits.size else float(t[-1])
    return (float(t_d), t_hi)


@dataclass
class FitResult:
    betas: list
    lambdas: dict
    n_c: float
    delta: float
    rss: float
    chi2: float
    n_points: int
    lambda_stderr: dict
    n_c_stderr: float
    delta_stderr: float
    windows: dict
    weighted: bool
    converged: bool
    iterations: int
    message: str = ""
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["lambdas"] = {repr(float(b)): v for b, v in self.lambdas.items()}
        d["lambda_stderr"] = {repr(float(b)): v for b, v in self.lambda_stderr.items()}
        d["windows"] = {repr(float(b)): list(v) for b, v in self.windows.items()}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("lambdas", "lambda_stderr"):
            d[key] = {float(b): float(v) for b, v in d[key].items()}
        d["windows"] = {float(b): tuple(v) for b, v in d["windows"].items()}
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _initial_lambda(t, c, t_lo, delta0):
    """Log-slope of C between ``t_lo`` and ``2 t_lo`` divided by ``2 delta0``."""
    lo = np.interp(t_lo, t, c)
    hi = np.interp(min(2.0 * t_lo, t[-1]), t, c)
    span = min(2.0 * t_lo, t[-1]) - t_lo
    if lo > 0 and hi > lo and span > 0:
        return math.log(hi / lo) / span / (2.0 * delta0)
    return 1.0


def fit_cf(curves, windows, *, delta0=0.5, n_c0=None, max_iter=500, weighted=True,
           tol=1e-15):
    """Joint damped Gauss-Newton (Levenberg-Marquardt) fit of ``cf_model``.

    ``curves`` is a list of ``(beta, series)`` where ``series`` has ``times``
    and either ``mean`` (+ ``stderr``) or ``values``. ``windows`` gives one
    ``(t_lo, t_hi)`` per curve. Internally the shared parameters are fitted
    as ``log N_c`` and ``log delta`` so they stay positive.
    """
    if not curves:
        raise ValueError("need at least one curve")
    if len(windows) != len(curves):
        raise ValueError("need one window per curve")
    betas = [float(b) for b, _ in curves]
    if len(set(betas)) != len(betas):
        raise ValueError("curves must have distinct betas")

    blocks = []
    for (beta, series), (t_lo, t_hi) in zip(curves, windows):
        t = np.asarray(series.times, dtype=np.float64)
        y = _real_values(series)
        if t_lo < t[0] or t_hi > t[-1] or t_hi <= t_lo:
            raise ValueError(f"window ({t_lo}, {t_hi}) for beta={beta} is outside the data range")
        sel = (t >= t_lo) & (t <= t_hi)
        if sel.sum() < MIN_WINDOW_POINTS:
            raise ValueError(
                f"window ({t_lo:g}, {t_hi:g}) for beta={beta} holds {sel.sum()} points; "
                f"need at least {MIN_WINDOW_POINTS}"
            )
        se = getattr(series, "stderr", None)
        sigma = np.ones(sel.sum())
        if weighted and se is not None:
            s = np.asarray(se)[sel]
            if np.all(s > 0):
                sigma = s
        blocks.append((t[sel], y[sel], sigma, t, y, t_lo))
    use_weights = any(np.any(b[2] != 1.0) for b in blocks)

    k = len(blocks)
    if n_c0 is None:
        n = None
        for _, s in curves:
            n = getattr(s, "params", {}).get("n", n)
        n_c0 = float(2**n) if n else 100.0
    theta = np.empty(k + 2)
    for i, (_, _, _, t_full, y_full, t_lo) in enumerate(blocks):
        theta[i] = _initial_lambda(t_full, y_full, t_lo, delta0)
    theta[k] = math.log(n_c0)
    theta[k + 1] = math.log(delta0)
    names = [f"lambda[beta={b:g}]" for b in betas] + ["log N_c", "log delta"]

    def residuals_and_jac(th):
        res, rows = [], []
        n_c, delta = math.exp(th[k]), math.exp(th[k + 1])
        for i, (t, y, sigma, *_rest) in enumerate(blocks):
            f = cf_model(t, th[i], n_c, delta)
            jac = cf_jacobian(t, th[i], n_c, delta)
            full = np.zeros((len(t), k + 2))
            full[:, i] = jac[:, 0]
            full[:, k] = jac[:, 1]
            full[:, k + 1] = jac[:, 2]
            res.append((y - f) / sigma)
            rows.append(full / sigma[:, None])
        return np.concatenate(res), np.vstack(rows)

    r, jac = residuals_and_jac(theta)
    for j in range(k + 2):
        if not np.any(jac[:, j]):
            raise SingularFitError(f"Jacobian column for {names[j]} vanishes at the start point")
    cost = float(r @ r)
    mu = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, max_iter + 1):
        jtj = jac.T @ jac
        grad = jac.T @ r
        if np.max(np.abs(grad)) <= tol * max(cost, 1e-300) or cost == 0.0:
            converged, message = True, "gradient vanished"
            break
        diag = np.diag(jtj).copy()
        diag[diag == 0] = 1.0
        accepted = False
        while mu < 1e16:
            try:
                step = np.linalg.solve(jtj + mu * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            trial = theta + step
            r_new, jac_new = residuals_and_jac(trial)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            mu *= 4.0
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        rel_drop = (cost - cost_new) / max(cost, 1e-300)
        small_step = np.max(np.abs(step) / (np.abs(theta) + 1e-8)) < 1e-12
        theta, r, jac, cost = trial, r_new, jac_new, cost_new
        mu = max(mu / 3.0, 1e-12)
        if small_step or rel_drop < tol:
            converged, message = True, "relative cost reduction below tolerance"
            break

    jtj = jac.T @ jac
    evals, evecs = np.linalg.eigh(jtj)
    if evals[0] <= 1e-14 * max(evals[-1], 1e-300):
        worst = names[int(np.argmax(np.abs(evecs[:, 0])))]
        best = {"lambdas": {b: float(theta[i]) for i, b in enumerate(betas)},
                "n_c": math.exp(theta[k]), "delta": math.exp(theta[k + 1]), "chi2": cost}
        raise SingularFitError(
            f"singular Jacobian at the solution; degenerate direction along {worst}", best)
    m = len(r)
    dof = max(m - (k + 2), 1)
    cov = np.linalg.inv(jtj) * (cost / dof)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))

    n_c, delta = math.exp(theta[k]), math.exp(theta[k + 1])
    rss = 0.0
    for i, (t, y, *_rest) in enumerate(blocks):
        rss += float(np.sum((y - cf_model(t, theta[i], n_c, delta)) ** 2))
    return FitResult(
        betas=betas,
        lambdas={b: float(theta[i]) for i, b in enumerate(betas)},
        n_c=n_c,
        delta=delta,
        rss=rss,
        chi2=cost,
        n_points=m,
        lambda_stderr={b: float(se[i]) for i, b in enumerate(betas)},
        n_c_stderr=float(n_c * se[k]),
        delta_stderr=float(delta * se[k + 1]),
        windows={b: (float(w[0]), float(w[1])) for b, w in zip(betas, windows)},
        weighted=use_weights,
        converged=converged,
        iterations=it,
        message=message,
    )


def fit_ensembles(c_curves, r_curves, *, threshold=DEFAULT_THRESHOLD,
                  plateau_fraction=DEFAULT_PLATEAU_FRACTION, windows=None, **kwargs):
    """Fit C curves with default windows derived from matching R curves.

    ``c_curves`` and ``r_curves`` map beta to series. Explicit ``windows``
    (beta -> (t_lo, t_hi)) override the defaults per curve.
    """
    windows = dict(windows or {})
    betas = sorted(c_curves)
    wins, t_ds = [], {}
    for b in betas:
        if b in windows:
            wins.append(tuple(windows[b]))
            continue
        t_d = dissipation_time(r_curves[b], threshold)
        t_ds[b] = t_d
        wins.append(default_window(c_curves[b], t_d, plateau_fraction))
    fit = fit_cf([(b, c_curves[b]) for b in betas], wins, **kwargs)
    fit.metadata["dissipation_times"] = {repr(b): t for b, t in t_ds.items()}
    fit.metadata["threshold"] = threshold
    fit.metadata["plateau_fraction"] = plateau_fraction
    return fit


@dataclass
class BoundRow:
    beta: float
    temperature: float
    lam: float
    bound: float
    growth_exponent: float
    ratio: float
    exceeds_bound: bool


@dataclass
class BoundReport:
    delta: float
    rows: list

    def to_dict(self):
        return {"delta": self.delta, "rows": [asdict(r) for r in self.rows]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self):
        lines = ["T,lambda,bound"]
        for r in self.rows:
            lines.append(f"{r.temperature:.17g},{r.lam:.17g},{r.bound:.17g}")
        return "\n".join(lines) + "\n"


def bound_report(fit):
    """Compare each fitted ``lam`` with ``2 pi T / (2 delta)``.

    ``2 delta lam`` is the early-time growth rate of ``C_f``; the ratio
    column is that rate over ``T``, to be read against ``2 pi``.
    """
    if not fit.converged:
        raise ValueError("bound_report needs a converged fit")
    rows = []
    for beta in sorted(fit.lambdas, reverse=True):
        if beta <= 0:
            raise ValueError("the bound needs a finite temperature (beta > 0)")
        temp = 1.0 / beta
        lam = fit.lambdas[beta]
        bound = 2.0 * math.pi * temp / (2.0 * fit.delta)
        growth = 2.0 * fit.delta * lam
        rows.append(BoundRow(beta=beta, temperature=temp, lam=lam, bound=bound,
                             growth_exponent=growth, ratio=growth / temp,
                             exceeds_bound=bool(lam > bound)))
    return BoundReport(delta=fit.delta, rows=rows)
