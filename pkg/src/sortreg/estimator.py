"""
Portfolio sorting estimator with linear controls.

In each period returns are regressed on the portfolio dummies and the
controls.  The control coefficients are obtained by first sweeping the
(weighted) within-portfolio means out of returns and controls, which is
the annihilator form of the dummy regression; the portfolio values are then
within-portfolio means of the control-adjusted returns.  The estimate at a
point is the time average of the per-period step functions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import DataError, EmptyCellAt, JTooLarge, PeriodFitFailed
from .panel import Panel, PanelPeriod
from .portfolio import Partition, form_partition

#: eigenvalue floor, relative to the raw control cross products, for singularity
SINGULAR_RTOL = 1e-10


@dataclass(frozen=True)
class PeriodFit:
    t: int
    partition: Partition
    cell_values: np.ndarray  # NaN marks cells without a value
    beta_hat: np.ndarray
    residuals: np.ndarray
    weights_used: np.ndarray  # weights normalized to sum to one within each cell
    ok: bool

    @property
    def J(self) -> int:
        return self.partition.J

    def cell_at(self, z) -> int:
        """Cell containing ``z``; raises if the fit failed or the cell is empty."""
        if not self.ok:
            raise PeriodFitFailed([self.t])
        j = self.partition.locate(z)
        if not np.isfinite(self.cell_values[j]):
            raise EmptyCellAt(_as_tuple(z), [self.t])
        return j

    def evaluable(self, z) -> bool:
        if not self.ok:
            return False
        return bool(np.isfinite(self.cell_values[self.partition.locate(z)]))


@dataclass(frozen=True)
class FitSeries:
    fits: tuple

    @property
    def T(self) -> int:
        return len(self.fits)

    @property
    def J_sequence(self) -> np.ndarray:
        return np.array([f.J for f in self.fits])

    @property
    def d(self) -> int:
        return self.fits[0].partition.d

    def __iter__(self):
        return iter(self.fits)

    def __len__(self):
        return len(self.fits)


@dataclass(frozen=True)
class PointEstimate:
    """Time-averaged estimate with its per-period trace.

    ``periods`` holds the period indices that entered the average; it only
    differs from the full panel when empty cells were skipped explicitly.
    """

    value: float
    trace: np.ndarray
    periods: tuple


def _as_tuple(z):
    return tuple(float(v) for v in np.atleast_1d(z))


def _cell_mean(cell, wn, v, n_cells):
    return np.bincount(cell, weights=wn * v, minlength=n_cells)


def fit_period(period: PanelPeriod, J: int, weighting: str = "equal") -> PeriodFit:
    """Fit the portfolio estimator in one cross section.

    Parameters
    ----------
    period : PanelPeriod
    J : int
        Portfolios per characteristic; the partition has ``J**d`` cells.
    weighting : {"equal", "value"}
        ``"value"`` weights assets by the period's weight column, both in the
        within-portfolio means and in the control projection (weighted least
        squares).

    Returns
    -------
    PeriodFit
        ``ok`` is False when the residualized control cross-product matrix
        is numerically singular; the cell values and coefficients are then
        NaN.
    """
    n = period.n
    if J > n:
        raise JTooLarge(J, n)
    R = period.returns
    Z = period.characteristics
    X = period.controls
    if weighting == "equal":
        w = np.ones(n)
    elif weighting == "value":
        if period.weights is None:
            raise DataError(f"period {period.t} has no weights for value weighting")
        w = np.asarray(period.weights, dtype=float)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    for arr in (R, Z, X, w):
        if not np.all(np.isfinite(arr)):
            raise DataError(f"non-finite data in period {period.t}")

    part = form_partition(Z, J)
    cell = part.cell_of
    n_cells = part.n_cells
    wtot = np.bincount(cell, weights=w, minlength=n_cells)
    usable = part.nonempty & (wtot > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        wn = w / wtot[cell]
    wn = np.where(usable[cell], wn, 0.0)

    d_x = X.shape[1]
    ok = True
    beta = np.zeros(d_x)
    adj = R
    if d_x:
        Xc = X - np.stack([_cell_mean(cell, wn, X[:, k], n_cells) for k in range(d_x)], 1)[cell]
        Rc = R - _cell_mean(cell, wn, R, n_cells)[cell]
        Xw = Xc * w[:, None]
        A = Xw.T @ Xc
        # measured against the raw design so controls that are constant within
        # portfolios (annihilated down to rounding noise) count as singular
        scale = np.linalg.eigvalsh((X * w[:, None]).T @ X)[-1]
        ev = np.linalg.eigvalsh(A)
        if not (scale > 0 and ev[0] > SINGULAR_RTOL * scale):
            ok = False
        else:
            beta = np.linalg.solve(A, Xw.T @ Rc)
            adj = R - X @ beta

    if not ok:
        nan = np.full(n_cells, np.nan)
        return PeriodFit(t=period.t, partition=part, cell_values=nan,
                         beta_hat=np.full(d_x, np.nan), residuals=np.full(n, np.nan),
                         weights_used=wn, ok=False)

    values = _cell_mean(cell, wn, adj, n_cells)
    values[~usable] = np.nan
    resid = adj - values[cell]
    resid[~usable[cell]] = 0.0
    for arr in (values, beta, resid, wn):
        arr.setflags(write=False)
    return PeriodFit(t=period.t, partition=part, cell_values=values, beta_hat=beta,
                     residuals=resid, weights_used=wn, ok=True)


def fit_panel(panel: Panel, J, weighting: str = "equal", workers: int = 1) -> FitSeries:
    """Fit every period.  ``J`` is an int or one value per period.

    Periods are independent; with ``workers > 1`` they are fitted on a thread
    pool.  Output order always follows the panel, so results do not depend
    on the schedule.
    """
    if np.ndim(J) == 0:
        Js = [int(J)] * panel.T
    else:
        Js = [int(j) for j in J]
        if len(Js) != panel.T:
            raise ValueError(f"got {len(Js)} portfolio counts for {panel.T} periods")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            fits = list(ex.map(lambda pj: fit_period(pj[0], pj[1], weighting),
                               zip(panel.periods, Js)))
    else:
        fits = [fit_period(p, j, weighting) for p, j in zip(panel.periods, Js)]
    return FitSeries(tuple(fits))


def mu_hat_t(fit: PeriodFit, z) -> float:
    """Step-function value of one period's fit at ``z``."""
    return float(fit.cell_values[fit.cell_at(z)])


def step_values(fit: PeriodFit, points) -> np.ndarray:
    """Vectorized step-function lookup at an (m, d) array of points.

    Points in cells without a value give NaN instead of raising.
    """
    cell = fit.partition.locate_many(points)
    return np.asarray(fit.cell_values)[cell]


def _check_evaluable(series: FitSeries, points):
    failed = [f.t for f in series if not f.ok]
    if failed:
        raise PeriodFitFailed(failed)
    for z in points:
        empty = [f.t for f in series if not f.evaluable(z)]
        if empty:
            raise EmptyCellAt(_as_tuple(z), empty)


def linear_functional(series: FitSeries, terms: Sequence, on_empty: str = "error") -> PointEstimate:
    """Estimate ``sum_k c_k mu(z_k)`` for ``terms = [(z_k, c_k), ...]``.

    The per-period trace ``sum_k c_k mu_t(z_k)`` is returned for
    Fama-MacBeth variance estimation.  High-minus-low is
    ``[(z_H, 1), (z_L, -1)]``; partial means are approximated by passing
    quadrature nodes and weights as terms.

    ``on_empty="skip"`` drops periods in which any point is not evaluable
    and averages over the remaining ones.  This is a convenience, not part
    of the estimator's theory; the default is to raise.
    """
    points = [np.atleast_1d(np.asarray(z, dtype=float)) for z, _ in terms]
    coefs = np.array([float(c) for _, c in terms])
    if on_empty == "skip":
        keep = [f for f in series if all(f.evaluable(z) for z in points)]
        if not keep:
            raise EmptyCellAt(_as_tuple(points[0]), [f.t for f in series])
    elif on_empty == "error":
        _check_evaluable(series, points)
        keep = list(series)
    else:
        raise ValueError(f"unknown on_empty policy {on_empty!r}")
    trace = np.array([sum(c * f.cell_values[f.partition.locate(z)]
                          for z, c in zip(points, coefs)) for f in keep], dtype=float)
    trace.setflags(write=False)
    # fixed summation order keeps the result independent of fitting schedule
    return PointEstimate(value=float(np.sum(trace) / trace.size), trace=trace,
                         periods=tuple(f.t for f in keep))


def mu_hat(series: FitSeries, z, on_empty: str = "error") -> PointEstimate:
    """Time average of the per-period estimates at ``z``."""
    return linear_functional(series, [(z, 1.0)], on_empty=on_empty)
