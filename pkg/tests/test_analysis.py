import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otoclab import analysis as an
from otoclab.correlators import EnsembleResult, TimeSeries


def curve(t, y, stderr=None, n=None):
    params = {"n": n} if n else {}
    return SimpleNamespace(times=np.asarray(t), mean=np.asarray(y), stderr=stderr, params=params)


# ---------------------------------------------------------------------------
# model


def test_cf_model_limits():
    assert an.cf_model(1e4, 0.7, 30.0, 0.4) == pytest.approx(2.0, abs=1e-12)
    assert an.cf_model(5.0, 0.0, 30.0, 0.4) == pytest.approx(2.0 * (1 / 31.0) ** 0.8, rel=1e-14)
    # the overflow-safe form holds far into the negative tail
    assert np.isfinite(an.cf_model(-1e5, 1.0, 10.0, 0.5))


def test_cf_model_matches_the_ratio_form():
    t = np.linspace(-3, 8, 40)
    lam, n_c, delta = 0.9, 25.0, 0.7
    x = np.exp(lam * t) / n_c
    assert np.allclose(an.cf_model(t, lam, n_c, delta), 2 * (x / (1 + x)) ** (2 * delta), rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(0.05, 3), n_c=st.floats(1.5, 1e4), delta=st.floats(0.05, 2))
def test_cf_model_is_monotone_with_asymptote_two(lam, n_c, delta):
    t = np.linspace(0, 60 / lam, 200)
    y = an.cf_model(t, lam, n_c, delta)
    assert np.all(np.diff(y) >= -1e-15)
    assert np.all(y <= 2.0)


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(0.05, 3), n_c=st.floats(1.5, 1e4), delta=st.floats(0.05, 2),
       s=st.floats(-5, 5))
def test_time_shift_degeneracy(lam, n_c, delta, s):
    t = np.linspace(0, 10, 30)
    a = an.cf_model(t + s, lam, n_c * math.exp(lam * s), delta)
    assert np.allclose(a, an.cf_model(t, lam, n_c, delta), rtol=1e-12, atol=1e-300)


def test_early_time_log_slope():
    lam, delta = 0.8, 0.6
    t = np.array([-40.0, -39.999])
    y = an.cf_model(t, lam, 40.0, delta)
    slope = (math.log(y[1]) - math.log(y[0])) / (t[1] - t[0])
    assert slope == pytest.approx(2 * delta * lam, rel=1e-6)


def test_jacobian_matches_finite_differences():
    t = np.linspace(0, 12, 25)
    lam, n_c, delta = 0.7, 33.0, 0.55
    jac = an.cf_jacobian(t, lam, n_c, delta)
    h = 1e-6
    cols = [
        (an.cf_model(t, lam + h, n_c, delta) - an.cf_model(t, lam - h, n_c, delta)) / (2 * h),
        (an.cf_model(t, lam, n_c * math.exp(h), delta)
         - an.cf_model(t, lam, n_c * math.exp(-h), delta)) / (2 * h),
        (an.cf_model(t, lam, n_c, delta * math.exp(h))
         - an.cf_model(t, lam, n_c, delta * math.exp(-h))) / (2 * h),
    ]
    assert np.allclose(jac, np.stack(cols, axis=-1), atol=1e-8)


# ---------------------------------------------------------------------------
# dissipation time and windows


def test_exponential_decay_crosses_at_ln20():
    t = np.linspace(0, 10, 2001)
    r = TimeSeries(t, np.exp(-t), "R", 1.0)
    assert an.dissipation_time(r) == pytest.approx(math.log(20), abs=1e-5)


def test_constant_autocorrelation_reports_no_dissipation():
    t = np.linspace(0, 10, 50)
    with pytest.raises(an.NoDissipationError, match="no dissipation"):
        an.dissipation_time(TimeSeries(t, np.ones(50), "R", 1.0))


def test_dissipation_needs_unit_start():
    t = np.linspace(0, 10, 50)
    with pytest.raises(ValueError):
        an.dissipation_time(TimeSeries(t, 0.5 * np.exp(-t), "R", 1.0))


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.01, 0.5), b=st.floats(0.01, 0.5), w=st.floats(0.1, 5))
def test_dissipation_time_monotone_in_threshold(a, b, w):
    lo, hi = sorted((a, b))
    t = np.linspace(0, 20, 400)
    r = curve(t, np.exp(-0.4 * t) * np.cos(w * t) ** 2)
    r.mean[0] = 1.0
    assert an.dissipation_time(r, lo) >= an.dissipation_time(r, hi)


def test_default_window_ends_at_plateau_fraction():
    t = np.linspace(0, 30, 301)
    c = curve(t, an.cf_model(t, 0.8, 40.0, 0.6))
    lo, hi = an.default_window(c, 2.0)
    assert lo == 2.0
    plateau = an.late_plateau(c)
    i = np.searchsorted(t, hi)
    assert c.mean[i] >= 0.9 * plateau > c.mean[i - 1]


# ---------------------------------------------------------------------------
# fitting


def test_single_curve_recovery_with_noise():
    rng = np.random.default_rng(7)
    t = np.linspace(0, 15, 50)
    y = an.cf_model(t, 0.8, 40.0, 0.6) + rng.normal(0, 0.01, t.size)
    fit = an.fit_cf([(2.0, curve(t, y))], [(0.0, 15.0)])
    assert fit.converged
    assert fit.lambdas[2.0] == pytest.approx(0.8, rel=0.02)
    assert fit.n_c == pytest.approx(40.0, rel=0.15)
    assert fit.delta == pytest.approx(0.6, rel=0.05)
    assert fit.n_points == 50
    assert 0 < fit.lambda_stderr[2.0] < 0.05


def test_joint_fit_recovers_both_rates():
    rng = np.random.default_rng(8)
    curves = []
    for beta, lam in ((1.0, 1.0), (3.0, 0.5)):
        t = np.linspace(0, 30 / (lam * 2), 50)
        curves.append((beta, curve(t, an.cf_model(t, lam, 40.0, 0.6) + rng.normal(0, 0.01, 50))))
    fit = an.fit_cf(curves, [(0.0, c.times[-1]) for _, c in curves])
    assert fit.lambdas[1.0] == pytest.approx(1.0, rel=0.02)
    assert fit.lambdas[3.0] == pytest.approx(0.5, rel=0.02)


def test_noiseless_fit_is_exact():
    t = np.linspace(0, 15, 60)
    fit = an.fit_cf([(1.0, curve(t, an.cf_model(t, 0.8, 40.0, 0.6)))], [(0.0, 15.0)])
    assert fit.rss < 1e-16 * fit.n_points
    assert fit.lambdas[1.0] == pytest.approx(0.8, rel=1e-6)
    assert fit.n_c == pytest.approx(40.0, rel=1e-6)
    assert fit.delta == pytest.approx(0.6, rel=1e-6)


def test_fit_is_deterministic_and_weighted_by_stderr():
    rng = np.random.default_rng(9)
    t = np.linspace(0, 15, 50)
    se = np.full(50, 0.01)
    y = an.cf_model(t, 0.8, 40.0, 0.6) + rng.normal(0, 0.01, 50)
    a = an.fit_cf([(1.0, curve(t, y, se))], [(0.0, 15.0)])
    b = an.fit_cf([(1.0, curve(t, y, se))], [(0.0, 15.0)])
    assert a.to_dict() == b.to_dict()
    assert a.weighted
    assert a.chi2 == pytest.approx(a.rss / 0.01**2, rel=1e-12)
    assert not an.fit_cf([(1.0, curve(t, y, se))], [(0.0, 15.0)], weighted=False).weighted


def test_non_convergence_is_flagged():
    t = np.linspace(0, 15, 50)
    y = an.cf_model(t, 0.8, 40.0, 0.6) + 0.01 * np.sin(7 * t)
    fit = an.fit_cf([(1.0, curve(t, y))], [(0.0, 15.0)], max_iter=1)
    assert not fit.converged and fit.iterations == 1


def test_flat_data_gives_singular_fit():
    t = np.linspace(0, 15, 50)
    with pytest.raises(an.SingularFitError, match="degenerate|vanishes"):
        an.fit_cf([(1.0, curve(t, np.full(50, 2.0)))], [(10.0, 15.0)], n_c0=1e-300 + 1e-6,
                  delta0=1e-3)


def test_fit_input_validation():
    t = np.linspace(0, 15, 50)
    c = curve(t, an.cf_model(t, 0.8, 40.0, 0.6))
    with pytest.raises(ValueError):
        an.fit_cf([], [])
    with pytest.raises(ValueError):
        an.fit_cf([(1.0, c)], [(0.0, 20.0)])
    with pytest.raises(ValueError, match="points"):
        an.fit_cf([(1.0, c)], [(0.0, 1.0)])
    with pytest.raises(ValueError):
        an.fit_cf([(1.0, c), (1.0, c)], [(0.0, 15.0)] * 2)


def test_fit_ensembles_uses_dissipation_windows():
    t = np.concatenate([[0.0], np.geomspace(0.05, 100, 120)])
    lam = {1.0: 1.2, 2.0: 0.9}
    c_curves, r_curves = {}, {}
    for b, l in lam.items():
        c_curves[b] = EnsembleResult(t, an.cf_model(t, l, 200.0, 0.6).astype(complex),
                                     np.zeros_like(t), 10, "C", b, 0, {"n": 8})
        r_curves[b] = EnsembleResult(t, np.exp(-t).astype(complex), np.zeros_like(t), 10, "R",
                                     b, 0, {"n": 8})
    fit = an.fit_ensembles(c_curves, r_curves)
    assert fit.converged and fit.iterations < 50
    for b, l in lam.items():
        assert fit.windows[b][0] == pytest.approx(math.log(20), abs=0.05)
        assert fit.lambdas[b] == pytest.approx(l, rel=1e-6)
    assert set(fit.metadata["dissipation_times"]) == {"1.0", "2.0"}
    fixed = an.fit_ensembles(c_curves, r_curves, windows={1.0: (1.0, 20.0)})
    assert fixed.windows[1.0] == (1.0, 20.0)


def test_fit_result_json_round_trip():
    t = np.linspace(0, 15, 50)
    fit = an.fit_cf([(0.5, curve(t, an.cf_model(t, 0.8, 40.0, 0.6)))], [(0.0, 15.0)])
    back = an.FitResult.from_json(fit.to_json())
    assert back.lambdas == fit.lambdas and back.windows == fit.windows
    assert back.to_dict() == fit.to_dict()


# ---------------------------------------------------------------------------
# bound report


def _fit_with(lambdas, delta):
    return an.FitResult(betas=list(lambdas), lambdas=lambdas, n_c=10.0, delta=delta, rss=0.0,
                        chi2=0.0, n_points=10, lambda_stderr={b: 0.0 for b in lambdas},
                        n_c_stderr=0.0, delta_stderr=0.0, windows={}, weighted=False,
                        converged=True, iterations=1)


def test_bound_arithmetic():
    rep = an.bound_report(_fit_with({1.0: 1.0}, 1.0))
    row = rep.rows[0]
    assert row.bound == pytest.approx(math.pi)
    assert row.growth_exponent == pytest.approx(2.0)
    assert rep.to_csv().splitlines()[0] == "T,lambda,bound"


@settings(max_examples=30, deadline=None)
@given(lams=st.lists(st.floats(0.01, 5), min_size=1, max_size=5), delta=st.floats(0.1, 2))
def test_bound_flags_and_ratio(lams, delta):
    lambdas = {float(i + 1): l for i, l in enumerate(lams)}
    rep = an.bound_report(_fit_with(lambdas, delta))
    for row in rep.rows:
        assert row.ratio == pytest.approx(row.growth_exponent / row.temperature, rel=1e-14)
        assert row.exceeds_bound == (row.lam > 2 * math.pi * row.temperature / (2 * delta))


def test_bound_requires_converged_finite_temperature():
    fit = _fit_with({1.0: 1.0}, 1.0)
    fit.converged = False
    with pytest.raises(ValueError):
        an.bound_report(fit)
    with pytest.raises(ValueError):
        an.bound_report(_fit_with({0.0: 1.0}, 1.0))
