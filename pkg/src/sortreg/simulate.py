"""
Synthetic panels and Monte Carlo experiments.

Returns are generated as ``R = mu(z) + x'beta_t + sigma_it * e``.  Every
(replication, period) pair draws from its own counter-based Philox stream
keyed by the experiment seed, so a replication's data never depends on how
many workers run the experiment or in what order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.stats import norm

from .estimator import fit_panel, linear_functional, step_values
from .exceptions import ExperimentFailed, InvalidSpec, SortregError
from .inference import infeasible_variance, t_test_hml, var_fm, var_pi
from .panel import Panel, PanelPeriod
from .tuning import select_j_factor, select_j_star

MU_FAMILIES = ("constant", "linear", "quadratic", "sine", "step")
Z_LAWS = ("uniform", "beta", "figure1")

#: maximum tolerated share of failed replications
MAX_FAILURE_RATE = 0.01


@dataclass(frozen=True)
class DgpSpec:
    """Data generating process.

    ``mu`` families are additively separable across characteristics:
    constant ``c``; linear ``b * sum(z)``; quadratic ``a * sum(z**2)``;
    sine ``a * sum(sin(2 pi f z))``; step ``a * 1{z_1 >= c}``.  Controls are
    ``x = x_link * mean(z) + x_noise * N(0, 1)``.  The noise scale is
    ``sigma * (1 + hetero * mean(z)) * exp(time_shock * g_t)`` with a common
    period shock ``g_t ~ N(0, 1)``.  The cross-section size is ``n`` in
    every period, a linear ramp from ``n`` to ``n_end``, or ``n_list``.
    """

    mu: str = "quadratic"
    mu_params: dict = field(default_factory=dict)
    d: int = 1
    d_x: int = 0
    beta: Optional[tuple] = None
    beta_amplitude: float = 0.0
    sigma: float = 1.0
    hetero: float = 0.0
    time_shock: float = 0.0
    z_law: str = "uniform"
    z_params: tuple = (1.0, 1.0)
    x_link: float = 0.5
    x_noise: float = 1.0
    n: int = 500
    n_end: Optional[int] = None
    n_list: Optional[tuple] = None
    T: int = 50
    seed: int = 0
    z_H: tuple = (1.0,)
    z_L: tuple = (0.0,)

    def __post_init__(self):
        if self.mu not in MU_FAMILIES:
            raise InvalidSpec(f"unknown mu family {self.mu!r}")
        if self.z_law not in Z_LAWS:
            raise InvalidSpec(f"unknown z law {self.z_law!r}")
        if self.d < 1 or self.d_x < 0 or self.T < 1:
            raise InvalidSpec("need d >= 1, d_x >= 0, T >= 1")
        if not self.sigma >= 0 or self.hetero < 0:
            raise InvalidSpec("noise scale must be nonnegative")
        if self.beta is not None and len(self.beta) != self.d_x:
            raise InvalidSpec("beta must have d_x entries")
        if np.any(self.n_schedule < 2):
            raise InvalidSpec("every period needs at least two assets")
        for name in ("z_H", "z_L"):
            v = tuple(float(a) for a in np.atleast_1d(getattr(self, name)))
            if len(v) != self.d:
                raise InvalidSpec(f"{name} must have d={self.d} coordinates")
            object.__setattr__(self, name, v)

    @property
    def n_schedule(self) -> np.ndarray:
        if self.n_list is not None:
            if len(self.n_list) != self.T:
                raise InvalidSpec("n_list must have T entries")
            return np.asarray(self.n_list, dtype=int)
        if self.n_end is not None:
            return np.round(np.linspace(self.n, self.n_end, self.T)).astype(int)
        return np.full(self.T, int(self.n))

    def beta_t(self, t: int) -> np.ndarray:
        base = np.ones(self.d_x) if self.beta is None else np.asarray(self.beta, dtype=float)
        return base + self.beta_amplitude * math.sin(2 * math.pi * t / 12)

    def mu_fn(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        p = self.mu_params
        if self.mu == "constant":
            return np.full(Z.shape[0], float(p.get("c", 0.0)))
        if self.mu == "linear":
            return float(p.get("b", 1.0)) * Z.sum(axis=1)
        if self.mu == "quadratic":
            return float(p.get("a", 1.0)) * (Z ** 2).sum(axis=1)
        if self.mu == "sine":
            f = float(p.get("f", 1.0))
            return float(p.get("a", 1.0)) * np.sin(2 * np.pi * f * Z).sum(axis=1)
        return float(p.get("a", 1.0)) * (Z[:, 0] >= float(p.get("c", 0.5)))

    def true_value(self, z) -> float:
        return float(self.mu_fn(np.atleast_1d(np.asarray(z, dtype=float))[None, :])[0])

    def true_contrast(self, z_H=None, z_L=None) -> float:
        z_H = self.z_H if z_H is None else z_H
        z_L = self.z_L if z_L is None else z_L
        return self.true_value(z_H) - self.true_value(z_L)


@dataclass(frozen=True)
class SimPanel:
    """A drawn panel with the pieces of the model kept for oracles.

    ``noise`` is defined as ``returns - signal``, so the model identity holds
    bit-exactly.
    """

    panel: Panel
    signal: tuple
    mu_values: tuple
    noise: tuple
    sigma2: tuple


def period_rng(seed: int, rep: int, t: int) -> np.random.Generator:
    """Counter-based stream for one (replication, period) pair."""
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=(int(rep), int(t)))
    return np.random.Generator(np.random.Philox(ss))


def _draw_z(spec: DgpSpec, rng, t, n):
    if spec.z_law == "uniform":
        return rng.random((n, spec.d))
    if spec.z_law == "beta":
        a, b = spec.z_params
        return rng.beta(a, b, size=(n, spec.d))
    a = 1.0 if t % 2 == 1 else 1.2
    return rng.beta(a, a, size=(n, spec.d))


def draw_panel(spec: DgpSpec, rep: int = 0) -> SimPanel:
    """Draw one panel; identical ``(spec, rep)`` always gives identical data."""
    periods, signal, mus, noise, sig2 = [], [], [], [], []
    for t, n in enumerate(spec.n_schedule, start=1):
        rng = period_rng(spec.seed, rep, t)
        shock = math.exp(spec.time_shock * rng.standard_normal()) if spec.time_shock else 1.0
        Z = _draw_z(spec, rng, t, int(n))
        zbar = Z.mean(axis=1)
        X = spec.x_link * zbar[:, None] + spec.x_noise * rng.standard_normal((int(n), spec.d_x))
        sd = spec.sigma * (1.0 + spec.hetero * zbar) * shock
        eps = sd * rng.standard_normal(int(n))
        mu = spec.mu_fn(Z)
        sig = mu + X @ spec.beta_t(t) if spec.d_x else mu
        R = sig + eps
        periods.append(PanelPeriod(t=t, returns=R, characteristics=Z,
                                   controls=X if spec.d_x else None))
        signal.append(sig)
        mus.append(mu)
        noise.append(R - sig)
        sig2.append(sd ** 2)
    return SimPanel(panel=Panel(tuple(periods)), signal=tuple(signal), mu_values=tuple(mus),
                    noise=tuple(noise), sigma2=tuple(sig2))


@dataclass
class McReport:
    replications: int
    failures: list
    true_contrast: float
    coverage: Optional[float] = None
    rejection_rate: Optional[float] = None
    rmse: Optional[float] = None
    bias: Optional[float] = None
    mean_se: Optional[float] = None
    mean_j: Optional[float] = None
    sd_j: Optional[float] = None
    j_grid: Optional[list] = None
    rmse_curve: Optional[list] = None
    optimum_j: Optional[int] = None
    selected_j: Optional[list] = None
    settings: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _run_reps(func, reps, workers):
    def guarded(rep):
        try:
            return rep, func(rep), None
        except SortregError as exc:
            return rep, None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(guarded, range(reps)))
    else:
        out = [guarded(r) for r in range(reps)]
    failures = [(rep, msg) for rep, _, msg in out if msg is not None]
    if len(failures) > MAX_FAILURE_RATE * reps:
        raise ExperimentFailed(f"{len(failures)} of {reps} replications failed; "
                               f"first: {failures[0][1]}")
    return [(rep, res) for rep, res, msg in out if msg is None], failures


def choose_j(panel: Panel, j_rule: str, J=None, z_H=None, z_L=None, grid=None, j_pilot=None):
    """Per-period portfolio counts under a fixed, inference (star) or factor rule."""
    if j_rule == "fixed":
        if J is None:
            raise InvalidSpec("fixed J rule needs J")
        return np.broadcast_to(np.asarray(J, dtype=int), (panel.T,)).copy()
    if j_rule == "star":
        return select_j_star(panel, z_H, z_L, grid=grid, j_pilot=j_pilot).j_star_sequence
    if j_rule == "factor":
        return select_j_factor(panel, z_H, z_L, grid=grid, j_pilot=j_pilot).j_factor_sequence
    raise InvalidSpec(f"unknown J rule {j_rule!r}")


def mc_coverage(spec: DgpSpec, reps: int, j_rule: str = "fixed", J=None, z_H=None, z_L=None,
                variance: str = "fm", workers: int = 1, grid=None, j_pilot=None,
                level: float = 0.95) -> McReport:
    """Coverage, rejection rate and RMSE of the high-minus-low test.

    Rejection is of ``mu(z_H) = mu(z_L)`` at the 5% level; coverage is of
    the true contrast by the nominal ``level`` interval.
    """
    if reps < 1:
        raise InvalidSpec("reps must be positive")
    z_H = spec.z_H if z_H is None else tuple(np.atleast_1d(z_H))
    z_L = spec.z_L if z_L is None else tuple(np.atleast_1d(z_L))
    truth = spec.true_contrast(z_H, z_L)

    def one(rep):
        sp = draw_panel(spec, rep)
        Js = choose_j(sp.panel, j_rule, J, z_H, z_L, grid, j_pilot)
        series = fit_panel(sp.panel, Js)
        res = t_test_hml(series, z_H, z_L, variance=variance)
        q = norm.ppf(0.5 + level / 2)
        covered = abs(res.estimate - truth) <= q * res.se
        return res.estimate, res.se, covered, res.reject_5pct, float(np.mean(Js))

    rows, failures = _run_reps(one, reps, workers)
    est = np.array([r[1][0] for r in rows])
    return McReport(
        replications=reps, failures=failures, true_contrast=truth,
        coverage=float(np.mean([r[1][2] for r in rows])),
        rejection_rate=float(np.mean([r[1][3] for r in rows])),
        rmse=float(np.sqrt(np.mean((est - truth) ** 2))),
        bias=float(np.mean(est - truth)),
        mean_se=float(np.mean([r[1][1] for r in rows])),
        mean_j=float(np.mean([r[1][4] for r in rows])),
        sd_j=float(np.std([r[1][4] for r in rows])),
        settings={"j_rule": j_rule, "J": J, "variance": variance, "level": level,
                  "z_H": list(z_H), "z_L": list(z_L)},
    )


def mc_mse_curve(spec: DgpSpec, reps: int, j_grid, z_H=None, z_L=None, workers: int = 1,
                 select: bool = False, grid=None, j_pilot=None) -> McReport:
    """Empirical RMSE of the contrast at each J of ``j_grid``.

    The same drawn panels are used for every J.  With ``select=True`` the
    inference-optimal J is also selected in each replication (median of the
    per-period sequence), for comparison with the empirical optimum.
    """
    z_H = spec.z_H if z_H is None else tuple(np.atleast_1d(z_H))
    z_L = spec.z_L if z_L is None else tuple(np.atleast_1d(z_L))
    truth = spec.true_contrast(z_H, z_L)
    j_grid = [int(j) for j in j_grid]

    def one(rep):
        sp = draw_panel(spec, rep)
        errs = [linear_functional(fit_panel(sp.panel, J), [(z_H, 1.0), (z_L, -1.0)]).value - truth
                for J in j_grid]
        sel = None
        if select:
            sel = float(np.median(select_j_star(sp.panel, z_H, z_L, grid=grid,
                                                j_pilot=j_pilot).j_star_sequence))
        return errs, sel

    rows, failures = _run_reps(one, reps, workers)
    E = np.array([r[1][0] for r in rows])
    curve = np.sqrt(np.mean(E ** 2, axis=0))
    report = McReport(replications=reps, failures=failures, true_contrast=truth,
                      j_grid=j_grid, rmse_curve=[float(c) for c in curve],
                      optimum_j=int(j_grid[int(np.argmin(curve))]),
                      settings={"z_H": list(z_H), "z_L": list(z_L)})
    if select:
        sel = [r[1][1] for r in rows]
        report.selected_j = sel
        report.mean_j = float(np.mean(sel))
        report.sd_j = float(np.std(sel))
    return report


def variance_agreement(spec: DgpSpec, reps: int, J=None, j_rule="fixed", z_H=None, z_L=None,
                       workers: int = 1) -> dict:
    """Compare FM and plug-in variances of the contrast to the infeasible oracle.

    Returns per-replication arrays of the three variances.
    """
    z_H = spec.z_H if z_H is None else tuple(np.atleast_1d(z_H))
    z_L = spec.z_L if z_L is None else tuple(np.atleast_1d(z_L))

    def one(rep):
        sp = draw_panel(spec, rep)
        Js = choose_j(sp.panel, j_rule, J, z_H, z_L)
        s = fit_panel(sp.panel, Js)
        fm = sum(var_fm(linear_functional(s, [(z, 1.0)]).trace) for z in (z_H, z_L))
        pi = var_pi(s, z_H) + var_pi(s, z_L)
        orc = infeasible_variance(s, sp.sigma2, z_H) + infeasible_variance(s, sp.sigma2, z_L)
        return fm, pi, orc

    rows, failures = _run_reps(one, reps, workers)
    arr = np.array([r[1] for r in rows])
    return {"v_fm": arr[:, 0], "v_pi": arr[:, 1], "v_oracle": arr[:, 2], "failures": failures}


PRESETS = {
    "null": DgpSpec(mu="constant", mu_params={"c": 0.0}, sigma=1.0, n=500, T=50),
    "quadratic": DgpSpec(mu="quadratic", mu_params={"a": 1.0}, sigma=1.0, n=500, T=50),
    "linear": DgpSpec(mu="linear", mu_params={"b": 1.0}, sigma=1.0, n=5000, T=50),
    "homoskedastic": DgpSpec(mu="quadratic", mu_params={"a": 1.0}, sigma=1.0, n=2000, T=100),
    "factor": DgpSpec(mu="quadratic", mu_params={"a": 1.0}, sigma=1.0, n=10000, T=100),
    "figure1": DgpSpec(mu="sine", mu_params={"a": 1.0, "f": 1.0}, sigma=1.0,
                       z_law="figure1", n=500, T=50),
}


def preset(name: str, **overrides) -> DgpSpec:
    if name not in PRESETS:
        raise InvalidSpec(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


def figure1_traces(spec: Optional[DgpSpec] = None, Js=(4, 10), Ts=(1, 2, 50),
                   n_points: int = 201) -> list:
    """Step-function traces for the introductory bias/variance illustration.

    For every (J, T) the estimate averages the first T periods.  The bias
    trace applies the same portfolios to the noise-free ``mu(z_it)``, which
    splits each estimate exactly into a bias part and a noise part.  The
    ``T = 1`` entries also carry the first cross section's data points.
    """
    spec = preset("figure1", T=max(Ts)) if spec is None else spec
    sp = draw_panel(spec)
    clean = Panel(tuple(PanelPeriod(t=p.t, returns=m, characteristics=p.characteristics)
                        for p, m in zip(sp.panel, sp.mu_values)))
    lo = min(float(p.characteristics.min()) for p in sp.panel)
    hi = max(float(p.characteristics.max()) for p in sp.panel)
    grid = np.linspace(lo, hi, n_points)
    truth = spec.mu_fn(grid[:, None])
    out = []
    for J in Js:
        series = fit_panel(sp.panel, J)
        noiseless = fit_panel(clean, J)
        per_period = np.array([step_values(f, grid) for f in series])
        per_period_bias = np.array([step_values(f, grid) for f in noiseless])
        cell_var = np.array([_mean_cell_variance(f) for f in series])
        for T in Ts:
            est = per_period[:T].mean(axis=0)
            bias_trace = per_period_bias[:T].mean(axis=0) - truth
            out.append({
                "J": int(J), "T": int(T), "z": grid.tolist(), "estimate": est.tolist(),
                "truth": truth.tolist(), "bias_trace": bias_trace.tolist(),
                "period_traces": per_period[:min(T, 2)].tolist(),
                "sup_distance": float(np.max(np.abs(est - truth))),
                "bias_sup": float(np.max(np.abs(bias_trace))),
                "bias_mean_abs": float(np.mean(np.abs(bias_trace))),
                "mean_cell_variance": float(np.mean(cell_var[:T])),
            })
            if T == 1:
                first = sp.panel[0]
                out[-1]["data_z"] = first.characteristics[:, 0].tolist()
                out[-1]["data_r"] = first.returns.tolist()
    return out


def _mean_cell_variance(fit) -> float:
    """Average estimated sampling variance of the portfolio means in one period."""
    counts = np.asarray(fit.partition.counts)
    ss = np.bincount(fit.partition.cell_of, weights=np.asarray(fit.residuals) ** 2,
                     minlength=counts.size)
    m = counts > 1
    return float(np.mean(ss[m] / (counts[m] - 1) / counts[m]))
