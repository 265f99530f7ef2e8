"""
Unbalanced panel container and per-period characteristic transforms.

A panel is an ordered list of cross sections.  Each cross section holds
returns, sorting characteristics, optional linear controls and optional
portfolio weights for the assets alive in that period.  Objects are
immutable: arrays are copied on construction and flagged read-only, and
transforms return new panels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .exceptions import DimensionMismatch, EmptyInput, NonPositiveValue, ZeroVariance


def _frozen(a, ndim, name, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PanelPeriod:
    """One cross section of the panel.

    Parameters
    ----------
    t : int
        Period index.  Only the ordering matters.
    returns : array_like, shape (n_t,)
    characteristics : array_like, shape (n_t, d)
        A 1-d array is treated as a single characteristic.
    controls : array_like, shape (n_t, d_x), optional
    weights : array_like, shape (n_t,), optional
        Nonnegative portfolio weights (e.g. lagged market equity).
    asset_ids : sequence, optional
    """

    t: int
    returns: np.ndarray
    characteristics: np.ndarray
    controls: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    asset_ids: Optional[tuple] = None

    def __post_init__(self):
        R = _frozen(self.returns, 1, "returns")
        Z = _frozen(self.characteristics, 2, "characteristics")
        n = R.shape[0]
        if self.controls is None:
            X = np.zeros((n, 0))
            X.setflags(write=False)
        else:
            X = _frozen(self.controls, 2, "controls")
        W = None if self.weights is None else _frozen(self.weights, 1, "weights")
        for name, arr in (("characteristics", Z), ("controls", X), ("weights", W)):
            if arr is not None and arr.shape[0] != n:
                raise DimensionMismatch(
                    f"period {self.t}: {name} has {arr.shape[0]} rows, returns has {n}"
                )
        ids = self.asset_ids
        if ids is not None:
            ids = tuple(ids)
            if len(ids) != n:
                raise DimensionMismatch(f"period {self.t}: asset_ids length {len(ids)} != {n}")
        object.__setattr__(self, "t", int(self.t))
        object.__setattr__(self, "returns", R)
        object.__setattr__(self, "characteristics", Z)
        object.__setattr__(self, "controls", X)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "asset_ids", ids)

    @property
    def n(self) -> int:
        return self.returns.shape[0]

    @property
    def d(self) -> int:
        return self.characteristics.shape[1]

    @property
    def d_x(self) -> int:
        return self.controls.shape[1]

    def with_characteristics(self, Z) -> "PanelPeriod":
        return replace(self, characteristics=Z)


@dataclass(frozen=True)
class Panel:
    """Ordered collection of :class:`PanelPeriod` objects."""

    periods: tuple

    def __post_init__(self):
        periods = tuple(self.periods)
        if not periods:
            raise EmptyInput("a panel needs at least one period")
        object.__setattr__(self, "periods", periods)

    def __len__(self):
        return len(self.periods)

    def __iter__(self):
        return iter(self.periods)

    def __getitem__(self, i):
        return self.periods[i]

    @property
    def T(self) -> int:
        return len(self.periods)

    @property
    def d(self) -> int:
        return self.periods[0].d

    @property
    def d_x(self) -> int:
        return self.periods[0].d_x

    @property
    def n_t(self) -> np.ndarray:
        return np.array([p.n for p in self.periods])

    @property
    def has_weights(self) -> bool:
        return all(p.weights is not None for p in self.periods)


@dataclass
class DiagnosticsReport:
    """Outcome of :func:`validate`.  ``violations`` lists human readable flags."""

    n: list
    char_min: np.ndarray
    char_max: np.ndarray
    char_std: np.ndarray
    zero_variance_columns: int
    weight_summary: Optional[dict]
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(panel: Panel) -> DiagnosticsReport:
    """Report per-period diagnostics and flag invariant violations.

    Nothing is raised and the input is not modified.  Support conditions on
    the population density of the characteristics cannot be checked from a
    sample; the min/max/std columns are empirical proxies only.
    """
    violations = []
    d, d_x = panel.d, panel.d_x
    T = panel.T
    cmin = np.full((T, d), np.nan)
    cmax = np.full((T, d), np.nan)
    cstd = np.full((T, d), np.nan)
    zero_var = 0
    wsum = []
    prev_t = None
    for k, p in enumerate(panel.periods):
        t = p.t
        if prev_t is not None and t <= prev_t:
            violations.append(f"period index not strictly increasing at position {k} (t={t})")
        prev_t = t
        if p.n < 1:
            violations.append(f"empty cross section, period {t}")
            continue
        if p.d != d or p.d_x != d_x:
            violations.append(
                f"dimension mismatch, period {t}: d={p.d}, d_x={p.d_x} (expected {d}, {d_x})"
            )
            continue
        for name, arr in (("return", p.returns), ("characteristic", p.characteristics),
                          ("control", p.controls), ("weight", p.weights)):
            if arr is None:
                continue
            bad = ~np.isfinite(arr)
            if bad.ndim == 2:
                bad = bad.any(axis=1)
            for i in np.flatnonzero(bad):
                violations.append(f"non-finite {name} value, period {t}, row {i}")
        Z = p.characteristics
        with np.errstate(invalid="ignore"):
            cmin[k] = Z.min(axis=0)
            cmax[k] = Z.max(axis=0)
            cstd[k] = Z.std(axis=0, ddof=1) if p.n > 1 else 0.0
        for j in range(d):
            if np.isfinite(cstd[k, j]) and cstd[k, j] == 0.0:
                zero_var += 1
                violations.append(f"zero cross-sectional std, period {t}, column {j}")
        if p.weights is not None:
            w = p.weights
            if np.any(w[np.isfinite(w)] < 0):
                violations.append(f"negative weight, period {t}")
            s = float(np.sum(w))
            wsum.append(s)
            if not s > 0:
                violations.append(f"weights do not sum to a positive value, period {t}")
    weight_summary = None
    if wsum:
        weight_summary = {"periods_with_weights": len(wsum),
                          "min_total": float(np.min(wsum)), "max_total": float(np.max(wsum))}
    return DiagnosticsReport(n=[int(p.n) for p in panel.periods], char_min=cmin, char_max=cmax,
                             char_std=cstd, zero_variance_columns=zero_var,
                             weight_summary=weight_summary, violations=violations)


def _map_column(panel: Panel, column: int, func) -> Panel:
    if not 0 <= column < panel.d:
        raise DimensionMismatch(f"characteristic column {column} out of range for d={panel.d}")
    out = []
    for p in panel.periods:
        Z = np.array(p.characteristics)
        Z[:, column] = func(p, Z[:, column])
        out.append(p.with_characteristics(Z))
    return Panel(tuple(out))


def zscore_by_period(panel: Panel, column: int = 0) -> Panel:
    """Standardize one characteristic within each cross section.

    Uses the sample standard deviation (divisor ``n_t - 1``).

    Raises
    ------
    ZeroVariance
        If the column is constant in some period.
    """
    def f(p, v):
        if v.size < 2:
            raise ZeroVariance(p.t, column)
        sd = v.std(ddof=1)
        if not sd > 0:
            raise ZeroVariance(p.t, column)
        return (v - v.mean()) / sd

    return _map_column(panel, column, f)


def log_by_period(panel: Panel, column: int = 0) -> Panel:
    """Natural log of one characteristic (e.g. market equity)."""
    def f(p, v):
        bad = np.flatnonzero(~(v > 0))
        if bad.size:
            raise NonPositiveValue(p.t, int(bad[0]), column)
        return np.log(v)

    return _map_column(panel, column, f)


def panel_from_arrays(t, returns, characteristics, controls=None, weights=None,
                      asset_ids=None) -> Panel:
    """Build a :class:`Panel` from stacked long-format arrays."""
    t = np.asarray(t)
    R = np.asarray(returns, dtype=float)
    Z = np.asarray(characteristics, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    X = None if controls is None else np.asarray(controls, dtype=float)
    if X is not None and X.ndim == 1:
        X = X[:, None]
    W = None if weights is None else np.asarray(weights, dtype=float)
    ids = None if asset_ids is None else np.asarray(asset_ids)
    n = R.shape[0]
    for name, arr in (("t", t), ("characteristics", Z), ("controls", X), ("weights", W),
                      ("asset_ids", ids)):
        if arr is not None and arr.shape[0] != n:
            raise DimensionMismatch(f"{name} has {arr.shape[0]} rows, returns has {n}")
    periods = []
    for tv in np.unique(t):
        m = t == tv
        periods.append(PanelPeriod(
            t=int(tv), returns=R[m], characteristics=Z[m],
            controls=None if X is None else X[m],
            weights=None if W is None else W[m],
            asset_ids=None if ids is None else tuple(ids[m].tolist()),
        ))
    return Panel(tuple(periods))


__all__: Sequence[str] = [
    "PanelPeriod", "Panel", "DiagnosticsReport", "validate", "zscore_by_period",
    "log_by_period", "panel_from_arrays",
]
