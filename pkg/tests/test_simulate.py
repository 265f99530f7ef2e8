import numpy as np
import pytest

from sortreg.exceptions import ExperimentFailed, InvalidSpec
from sortreg.simulate import (DgpSpec, _run_reps, draw_panel, figure1_traces, mc_coverage,
                              mc_mse_curve, period_rng, preset, variance_agreement)


def test_same_seed_same_panel():
    spec = preset("quadratic", d_x=2, hetero=0.5, time_shock=0.3, T=5, n=50)
    a, b = draw_panel(spec, 3), draw_panel(spec, 3)
    for pa, pb in zip(a.panel, b.panel):
        np.testing.assert_array_equal(pa.returns, pb.returns)
        np.testing.assert_array_equal(pa.controls, pb.controls)
    c = draw_panel(spec, 4)
    assert not np.array_equal(a.panel[0].returns, c.panel[0].returns)


def test_streams_are_keyed_by_rep_and_period():
    x = period_rng(7, 2, 3).random(3)
    np.testing.assert_array_equal(x, period_rng(7, 2, 3).random(3))
    assert not np.array_equal(x, period_rng(7, 3, 2).random(3))


def test_model_identity_exact():
    spec = DgpSpec(mu="sine", d_x=1, beta_amplitude=0.5, hetero=1.0, time_shock=0.2, T=4, n=60)
    sp = draw_panel(spec)
    for p, s, e in zip(sp.panel, sp.signal, sp.noise):
        assert np.array_equal(p.returns, s + e)


def test_zero_noise_linear_returns_equal_characteristics():
    sp = draw_panel(DgpSpec(mu="linear", mu_params={"b": 1.0}, sigma=0.0, T=3, n=20))
    for p in sp.panel:
        np.testing.assert_array_equal(p.returns, p.characteristics[:, 0])


def test_beta_law_mean():
    sp = draw_panel(DgpSpec(z_law="beta", z_params=(1.0, 1.0), n=10_000, T=1))
    z = sp.panel[0].characteristics[:, 0]
    assert abs(z.mean() - 0.5) < 3 * np.sqrt(1 / 12) / 100


def test_figure1_law_alternates():
    sp = draw_panel(preset("figure1", n=20_000, T=2))
    # Beta(1,1) variance 1/12, Beta(1.2,1.2) variance 1/(4 * 3.4)
    v = [p.characteristics[:, 0].var() for p in sp.panel]
    assert v[0] == pytest.approx(1 / 12, rel=0.05)
    assert v[1] == pytest.approx(1 / 13.6, rel=0.05)


def test_n_schedules():
    assert DgpSpec(n=10, n_end=20, T=3).n_schedule.tolist() == [10, 15, 20]
    assert DgpSpec(n_list=(5, 6), T=2).n_schedule.tolist() == [5, 6]
    with pytest.raises(InvalidSpec):
        DgpSpec(n=1)
    with pytest.raises(InvalidSpec):
        DgpSpec(mu="cubic")
    with pytest.raises(InvalidSpec):
        preset("nope")


def test_true_contrast_is_analytic():
    assert preset("quadratic").true_contrast() == 1.0
    assert DgpSpec(mu="sine", mu_params={"a": 2.0, "f": 1.0}).true_contrast((0.25,), (0.75,)) \
        == pytest.approx(4.0)


def test_coverage_report_is_deterministic_across_workers():
    spec = preset("quadratic", n=300, T=10)
    a = mc_coverage(spec, 12, j_rule="fixed", J=6, workers=1)
    b = mc_coverage(spec, 12, j_rule="fixed", J=6, workers=4)
    assert a.as_dict() == b.as_dict()
    assert 0.0 <= a.coverage <= 1.0


def test_failures_above_one_percent_abort():
    def one(rep):
        if rep % 10 == 0:
            raise InvalidSpec("boom")
        return rep

    with pytest.raises(ExperimentFailed):
        _run_reps(one, 50, 1)
    rows, failures = _run_reps(lambda r: r, 5, 2)
    assert [r for r, _ in rows] == list(range(5)) and failures == []


def test_flat_mu_rmse_nondecreasing():
    rep = mc_mse_curve(preset("null", n=400, T=10), 100, [2, 4, 8, 16, 32], workers=4)
    assert np.all(np.diff(rep.rmse_curve) >= 0)
    assert rep.optimum_j == 2


def test_undersmoothing_breaks_coverage():
    # J fixed at 2 while n is large: bias dominates the standard error
    rep = mc_coverage(preset("quadratic", n=20_000, T=100), 8, j_rule="fixed", J=2, workers=4)
    assert rep.coverage < 0.90


def test_optimum_shifts_right_with_t():
    grid = [4, 8, 16, 32, 64]
    lo = mc_mse_curve(preset("quadratic", n=500, T=10), 100, grid, workers=4)
    hi = mc_mse_curve(preset("quadratic", n=500, T=160), 100, grid, workers=4)
    assert hi.optimum_j > lo.optimum_j


def test_variance_agreement_shapes():
    out = variance_agreement(preset("quadratic", n=400, T=20), 5, J=8)
    assert out["v_fm"].shape == (5,) and np.all(out["v_oracle"] > 0)


def test_figure1_traces_structure():
    tr = figure1_traces(n_points=51)
    assert [(t["J"], t["T"]) for t in tr] == [(4, 1), (4, 2), (4, 50), (10, 1), (10, 2), (10, 50)]
    for t in tr:
        assert len(t["z"]) == len(t["estimate"]) == len(t["truth"]) == 51
        assert len(t["period_traces"]) == min(t["T"], 2)
    assert len(tr[0]["data_z"]) == 500
