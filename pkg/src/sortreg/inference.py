"""
Variance estimation and tests for the portfolio sorting estimator.

Two estimators of the sampling variance of the time-averaged estimate are
provided: the Fama-MacBeth variance of the per-period trace, and a plug-in
built from squared within-portfolio residuals.  Both are O(J^d / (nT)).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .estimator import FitSeries, _check_evaluable, linear_functional, mu_hat
from .exceptions import InsufficientPeriods, NoControls, PeriodFitFailed


@dataclass(frozen=True)
class VarianceEstimate:
    v_fm: float
    v_pi: float
    T_used: int
    method: str = "pointwise"


@dataclass(frozen=True)
class TestResult:
    estimate: float
    se: float
    t_stat: float
    p_value: float
    reject_5pct: bool
    ci_low: float
    ci_high: float
    variance: str = "fm"
    reference: str = "normal"
    flags: tuple = field(default_factory=tuple)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    __test__ = False  # not a pytest class


def var_fm(values) -> float:
    """Fama-MacBeth variance ``sum_t (v_t - mean)^2 / T^2``.

    >>> var_fm([1.0, 3.0])
    0.5
    """
    v = np.asarray(values, dtype=float)
    T = v.size
    if T < 2:
        raise InsufficientPeriods(T)
    if np.all(v == v[0]):
        return 0.0  # avoid a rounding-level variance from the mean
    return float(np.sum((v - v.mean()) ** 2) / T ** 2)


def _pi_terms(series: FitSeries, terms):
    """Per-period plug-in contributions for a linear functional.

    Each period contributes ``sum_i a_i^2 e_i^2`` where ``a_i`` is the
    functional's weight on asset i.  For a single point with equal weights
    this is ``sum_{i in cell} e_i^2 / N^2``.
    """
    out = np.empty(series.T)
    for k, f in enumerate(series):
        a = np.zeros(f.residuals.shape[0])
        for z, c in terms:
            j = f.cell_at(z)
            m = f.partition.cell_of == j
            a[m] += c * f.weights_used[m]
        out[k] = np.sum(a ** 2 * f.residuals ** 2)
    return out


def var_pi(series: FitSeries, z) -> float:
    """Plug-in variance ``sum_t sum_{i in cell_t(z)} e_it^2 / N_jt^2 / T^2``."""
    return var_pi_functional(series, [(z, 1.0)])


def var_pi_functional(series: FitSeries, terms: Sequence) -> float:
    """Plug-in variance of ``sum_k c_k mu_hat(z_k)``.

    Points sharing a portfolio are handled exactly, so this does not assume
    the pointwise estimates are uncorrelated.
    """
    _check_evaluable(series, [z for z, _ in terms])
    return float(np.sum(_pi_terms(series, terms)) / series.T ** 2)


def infeasible_variance(series: FitSeries, sigma2, z) -> float:
    """Conditional variance of ``mu_hat(z)`` given known ``sigma2_it``.

    ``sum_t sum_{i in cell_t(z)} w_it^2 sigma2_it / T^2``; with equal weights
    ``w_it = 1 / N_jt``.  ``sigma2`` is a sequence of per-period arrays.
    """
    _check_evaluable(series, [z])
    total = 0.0
    for f, s2 in zip(series, sigma2):
        m = f.partition.cell_of == f.cell_at(z)
        total += float(np.sum(f.weights_used[m] ** 2 * np.asarray(s2, dtype=float)[m]))
    return total / series.T ** 2


def variance_estimate(series: FitSeries, z) -> VarianceEstimate:
    est = mu_hat(series, z)
    return VarianceEstimate(v_fm=var_fm(est.trace), v_pi=var_pi(series, z), T_used=series.T)


def _shares_cell(series: FitSeries, z_H, z_L):
    return [f.t for f in series
            if f.partition.locate(np.atleast_1d(z_H)) == f.partition.locate(np.atleast_1d(z_L))]


def _finish(estimate, se, variance, reference, df, flags, level=0.95):
    if se > 0:
        t = estimate / se
    elif estimate == 0:
        t = 0.0
    else:
        t = float(np.copysign(np.inf, estimate))
        flags = flags + ("degenerate_variance",)
    if reference == "normal":
        dist = stats.norm
    elif reference == "t":
        dist = stats.t(df)
    else:
        raise ValueError(f"unknown reference distribution {reference!r}")
    p = float(2 * dist.sf(abs(t))) if np.isfinite(t) else 0.0
    q = float(dist.ppf(0.5 + level / 2))
    return TestResult(estimate=float(estimate), se=float(se), t_stat=float(t), p_value=p,
                      reject_5pct=bool(p < 0.05), ci_low=float(estimate - q * se),
                      ci_high=float(estimate + q * se), variance=variance,
                      reference=reference, flags=tuple(flags))


def t_test_hml(series: FitSeries, z_H, z_L, variance: str = "fm", fm_form: str = "pointwise",
               reference: str = "normal") -> TestResult:
    """Two-sided test of ``mu(z_H) - mu(z_L) = 0``.

    Parameters
    ----------
    variance : {"fm", "pi"}
    fm_form : {"pointwise", "difference"}
        ``"pointwise"`` uses ``V(z_H) + V(z_L)``.  ``"difference"`` takes the
        Fama-MacBeth variance of the per-period difference, which stays valid
        when both points share a portfolio in some period.
    reference : {"normal", "t"}
        ``"t"`` uses T - 1 degrees of freedom, for comparison with common
        empirical practice.
    """
    flags = ()
    shared = _shares_cell(series, z_H, z_L)
    if shared:
        flags += ("same_portfolio",)
        warnings.warn(f"z_H and z_L share a portfolio in periods {shared}", stacklevel=2)
    terms = [(z_H, 1.0), (z_L, -1.0)]
    est = linear_functional(series, terms)
    if variance == "fm":
        if fm_form == "pointwise":
            v = var_fm(mu_hat(series, z_H).trace) + var_fm(mu_hat(series, z_L).trace)
        elif fm_form == "difference":
            v = var_fm(est.trace)
        else:
            raise ValueError(f"unknown fm_form {fm_form!r}")
    elif variance == "pi":
        if fm_form == "difference" or shared:
            v = var_pi_functional(series, terms)
        else:
            v = var_pi(series, z_H) + var_pi(series, z_L)
    else:
        raise ValueError(f"unknown variance {variance!r}")
    return _finish(est.value, np.sqrt(v), variance, reference, series.T - 1, flags)


def beta_fm_inference(series: FitSeries, a, reference: str = "normal") -> TestResult:
    """Fama-MacBeth inference on ``a' mean_t(beta_t)``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if series.fits[0].beta_hat.size == 0:
        raise NoControls("no control variables in the fitted model")
    if series.T < 2:
        raise InsufficientPeriods(series.T)
    failed = [f.t for f in series if not f.ok]
    if failed:
        raise PeriodFitFailed(failed)
    trace = np.array([a @ f.beta_hat for f in series])
    se = np.sqrt(var_fm(trace))
    return _finish(float(np.sum(trace) / trace.size), se, "fm", reference, series.T - 1, ())


__all__ = [
    "VarianceEstimate", "TestResult", "var_fm", "var_pi", "var_pi_functional",
    "infeasible_variance", "variance_estimate", "t_test_hml", "beta_fm_inference",
]
