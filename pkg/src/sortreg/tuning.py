"""
Data-driven choice of the number of portfolios.

The high-minus-low contrast has mean square error

    V1 J^d / (nT)  +  V2 J^(2d) / (n^2 T)  +  B^2 / J^2  + ...

For inference the leading variance term is already accounted for by the
standard error, so J* balances the higher-order variance against the
squared bias; for point estimation (factor construction) J** balances the
leading variance against the bias instead.

The bias and variance constants are estimated with plug-ins:

* ``B`` by Richardson extrapolation of the contrast between a pilot J and
  2J (bias is approximately B / J);
* ``V1`` by rescaling the plug-in standard error to its J^d / (nT) rate;
* ``V2`` by the second-order term of E[1/N] for a binomial portfolio count.

All three are labelled plug-ins in the returned :class:`TuningResult`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimator import fit_panel, linear_functional
from .exceptions import EmptyGrid, JTooLarge
from .inference import var_pi
from .panel import Panel


@dataclass(frozen=True)
class TuningResult:
    objective: str
    grid: np.ndarray
    b_hat: np.ndarray
    v1_hat: np.ndarray
    v2_hat: np.ndarray
    mse_hat: np.ndarray
    selected: int
    j_star_sequence: np.ndarray
    j_factor_sequence: np.ndarray
    j_pilot: int
    n_bar: float
    T: int
    d: int
    unimodal: bool
    flags: tuple = field(default_factory=tuple)
    constants: str = "plug-in"

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def default_grid(panel: Panel, ratio: float = 1.3, start: int = 2) -> np.ndarray:
    """Geometric grid from ``start`` to ``(min_t n_t / 4)^(1/d)``."""
    hi = max(start, int((panel.n_t.min() / 4) ** (1.0 / panel.d)))
    g = [start]
    x = float(start)
    while True:
        x *= ratio
        j = int(round(x))
        if j > hi:
            break
        if j > g[-1]:
            g.append(j)
    return np.array(g, dtype=int)


def default_pilot(panel: Panel) -> int:
    """Rule-of-thumb pilot J for the bias constant, ~ (nT)^(1/(d+4))."""
    n_bar = float(np.mean(panel.n_t))
    jp = int(round(0.5 * (n_bar * panel.T) ** (1.0 / (panel.d + 4))))
    return int(np.clip(jp, 2, max(2, int(panel.n_t.min()) // 2)))


def _hml(series, z_H, z_L) -> float:
    return linear_functional(series, [(z_H, 1.0), (z_L, -1.0)]).value


def bias_constant_hat(panel: Panel, z_H, z_L, J_pilot: int, weighting: str = "equal",
                      workers: int = 1) -> float:
    """Richardson estimate ``2 J (theta_J - theta_2J)`` of the bias constant."""
    J_pilot = int(J_pilot)
    n_min = int(panel.n_t.min())
    if 2 * J_pilot > n_min:
        raise JTooLarge(2 * J_pilot, n_min)
    th1 = _hml(fit_panel(panel, J_pilot, weighting, workers), z_H, z_L)
    th2 = _hml(fit_panel(panel, 2 * J_pilot, weighting, workers), z_H, z_L)
    return 2.0 * J_pilot * (th1 - th2)


def _cell_resid_var(fit, z) -> float:
    m = fit.partition.cell_of == fit.cell_at(z)
    return float(np.mean(fit.residuals[m] ** 2))


def variance_constants_hat(panel: Panel, z_H, z_L, J: int, weighting: str = "equal",
                           series=None, workers: int = 1):
    """Plug-in estimates ``(v1_hat, v2_hat)`` of the variance constants at ``J``."""
    if series is None:
        series = fit_panel(panel, J, weighting, workers)
    d = series.d
    T = series.T
    n_t = panel.n_t.astype(float)
    n_bar = float(np.mean(n_t))
    Jd = float(J) ** d
    v1 = n_bar * T / Jd * (var_pi(series, z_H) + var_pi(series, z_L))
    s2 = np.array([_cell_resid_var(f, z_H) + _cell_resid_var(f, z_L) for f in series])
    v2 = n_bar ** 2 * T / Jd ** 2 * np.sum(s2 * (Jd / n_t) ** 2 * (1.0 - 1.0 / Jd)) / T ** 2
    return float(v1), float(v2)


def _floor(x):
    # fractional powers of exact cubes/squares land just below the integer
    return np.floor(x * (1.0 + 1e-12))


def closed_form_j_star(b_hat, v2_hat, d, n_t, T, lower=1):
    """``floor((B^2 / (d V2) n_t^2 T)^(1/(2d+2)))``, clipped to ``[lower, n_t]``."""
    n_t = np.asarray(n_t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (b_hat ** 2 / (d * v2_hat) * n_t ** 2 * T) ** (1.0 / (2 * d + 2))
    raw = np.where(np.isfinite(raw), raw, n_t)
    if b_hat == 0:
        raw = np.zeros_like(n_t)  # no bias: the coarsest admissible partition
    return np.clip(_floor(raw), lower, n_t).astype(int)


def closed_form_j_factor(b_hat, v1_hat, d, n_t, T, lower=1):
    """``floor((2 B^2 / (d V1) n_t T)^(1/(d+2)))``, clipped to ``[lower, n_t]``."""
    n_t = np.asarray(n_t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (2 * b_hat ** 2 / (d * v1_hat) * n_t * T) ** (1.0 / (d + 2))
    raw = np.where(np.isfinite(raw), raw, n_t)
    if b_hat == 0:
        raw = np.zeros_like(n_t)  # no bias: the coarsest admissible partition
    return np.clip(_floor(raw), lower, n_t).astype(int)


def _is_unimodal(c) -> bool:
    k = int(np.argmin(c))
    return bool(np.all(np.diff(c[:k + 1]) <= 0) and np.all(np.diff(c[k:]) >= 0))


def _tune(panel, z_H, z_L, grid, objective, j_pilot, weighting, uniform, pilot_mode, workers):
    if grid is None:
        grid = default_grid(panel)
    grid = np.unique(np.asarray(grid, dtype=int))
    if grid.size == 0:
        raise EmptyGrid("candidate grid is empty")
    n_min = int(panel.n_t.min())
    if grid[0] < 1 or 2 * grid[-1] > n_min:
        raise JTooLarge(int(grid[-1]), n_min // 2)
    d = panel.d
    T = panel.T
    n_bar = float(np.mean(panel.n_t))
    if j_pilot is None:
        j_pilot = default_pilot(panel)

    series_by_j = {}

    def fits(J):
        if J not in series_by_j:
            series_by_j[J] = fit_panel(panel, J, weighting, workers)
        return series_by_j[J]

    # differences of cell means below this are rounding noise, not bias
    r_scale = max(float(np.max(np.abs(p.returns))) for p in panel)
    b_tol = 64 * np.finfo(float).eps * r_scale

    b = np.empty(grid.size)
    v1 = np.empty(grid.size)
    v2 = np.empty(grid.size)
    if pilot_mode == "fixed":
        b_fixed = 2.0 * j_pilot * (_hml(fits(j_pilot), z_H, z_L) - _hml(fits(2 * j_pilot), z_H, z_L))
    for k, J in enumerate(grid):
        J = int(J)
        if pilot_mode == "fixed":
            b[k] = b_fixed
        elif pilot_mode == "per_candidate":
            b[k] = 2.0 * J * (_hml(fits(J), z_H, z_L) - _hml(fits(2 * J), z_H, z_L))
        else:
            raise ValueError(f"unknown pilot_mode {pilot_mode!r}")
        v1[k], v2[k] = variance_constants_hat(panel, z_H, z_L, J, weighting, series=fits(J))
        if pilot_mode == "fixed" and J not in (j_pilot, 2 * j_pilot):
            series_by_j.pop(J, None)

    b[np.abs(b) <= b_tol * 2 * np.maximum(grid, j_pilot)] = 0.0
    v1[v1 <= b_tol ** 2] = 0.0
    v2[v2 <= b_tol ** 2] = 0.0
    Jd = grid.astype(float) ** d
    mse_star = v2 * Jd ** 2 / (n_bar ** 2 * T) + b ** 2 / grid.astype(float) ** 2
    mse_factor = v1 * Jd / (n_bar * T) + b ** 2 / grid.astype(float) ** 2
    k_star = int(np.argmin(mse_star))
    k_factor = int(np.argmin(mse_factor))
    n_eff = np.full(T, n_bar) if uniform else panel.n_t
    lower = int(grid[0])
    mse = mse_star if objective == "star" else mse_factor
    k = k_star if objective == "star" else k_factor
    # both sequences share the constants estimated at the selected candidate
    j_star = closed_form_j_star(b[k], v2[k], d, n_eff, T, lower)
    j_factor = closed_form_j_factor(b[k], v1[k], d, n_eff, T, lower)
    j_star = np.minimum(j_star, panel.n_t)
    j_factor = np.minimum(j_factor, panel.n_t)
    unimodal = _is_unimodal(mse)
    flags = () if unimodal else ("criterion_not_unimodal",)
    return TuningResult(objective=objective, grid=grid, b_hat=b, v1_hat=v1, v2_hat=v2,
                        mse_hat=mse, selected=int(grid[k]), j_star_sequence=j_star,
                        j_factor_sequence=j_factor, j_pilot=int(j_pilot), n_bar=n_bar, T=T,
                        d=d, unimodal=unimodal, flags=flags)


def select_j_star(panel: Panel, z_H, z_L, grid=None, j_pilot=None, weighting="equal",
                  uniform=False, pilot_mode="fixed", workers=1) -> TuningResult:
    """Minimize ``V2 J^(2d)/(n^2 T) + B^2/J^2`` over the grid (inference-optimal J).

    ``j_star_sequence`` and ``j_factor_sequence`` hold the per-period closed
    forms, both evaluated with the constants at the grid minimizer.  ``uniform=True`` uses the average
    cross-section size in place of ``n_t`` so every period gets the same J.
    Ties go to the smaller J.
    """
    return _tune(panel, z_H, z_L, grid, "star", j_pilot, weighting, uniform, pilot_mode, workers)


def select_j_factor(panel: Panel, z_H, z_L, grid=None, j_pilot=None, weighting="equal",
                    uniform=False, pilot_mode="fixed", workers=1) -> TuningResult:
    """Minimize ``V1 J^d/(nT) + B^2/J^2`` (point-estimation optimal J)."""
    return _tune(panel, z_H, z_L, grid, "factor", j_pilot, weighting, uniform, pilot_mode, workers)
