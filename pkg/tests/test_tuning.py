import numpy as np
import pytest

from sortreg.exceptions import EmptyGrid, JTooLarge
from sortreg.panel import Panel, PanelPeriod
from sortreg.simulate import draw_panel, preset
from sortreg.tuning import (_is_unimodal, bias_constant_hat, closed_form_j_factor,
                            closed_form_j_star, default_grid, default_pilot, select_j_factor,
                            select_j_star, variance_constants_hat)


def test_closed_form_hand_values():
    # B^2/(d V2) = 1 with n^2 T = 1e8 * 1e2
    assert closed_form_j_star(1.0, 1.0, 1, 10_000, 100).tolist() == 316
    # 2 B^2/(d V1) = 1 with n T = 1000 * 125
    assert closed_form_j_factor(1.0, 2.0, 1, 1000, 125).tolist() == 50


@pytest.mark.parametrize("d", [1, 2])
def test_closed_form_rates(d):
    base = closed_form_j_star(1.0, 1.0 / d, d, 10_000, 100)
    # J* grows like (n^2 T)^(1/(2d+2))
    assert closed_form_j_star(1.0, 1.0 / d, d, 40_000, 100) == pytest.approx(
        base * 4 ** (2 / (2 * d + 2)), abs=1)
    assert closed_form_j_star(1.0, 1.0 / d, d, 10_000, 400) == pytest.approx(
        base * 4 ** (1 / (2 * d + 2)), abs=1)
    f = closed_form_j_factor(1.0, 2.0 / d, d, 10_000, 100)
    assert closed_form_j_factor(1.0, 2.0 / d, d, 40_000, 100) == pytest.approx(
        f * 4 ** (1 / (d + 2)), abs=1)


def test_closed_form_clipping_and_zero_bias():
    assert closed_form_j_star(0.0, 1.0, 1, 500, 50, lower=3).tolist() == 3
    assert closed_form_j_factor(0.0, 1.0, 1, 500, 50, lower=2).tolist() == 2
    assert closed_form_j_star(1e6, 1e-6, 1, 500, 50).tolist() == 500
    seq = closed_form_j_star(1.0, 1.0, 1, [400, 900, 1600], 50)
    assert np.all(np.diff(seq) > 0)


def test_default_grid_and_pilot():
    panel = draw_panel(preset("quadratic", T=4)).panel
    g = default_grid(panel)
    assert g[0] == 2 and g[-1] <= 125 and np.all(np.diff(g) > 0)
    assert 2 <= default_pilot(panel) <= 250


def test_is_unimodal():
    assert _is_unimodal(np.array([3.0, 2.0, 1.0, 2.0]))
    assert _is_unimodal(np.array([1.0, 2.0, 3.0]))
    assert not _is_unimodal(np.array([3.0, 1.0, 2.0, 0.5]))


def test_noiseless_flat_data_picks_smallest_candidate():
    rng = np.random.default_rng(0)
    periods = tuple(PanelPeriod(t=t, returns=np.full(200, 0.3), characteristics=rng.random(200))
                    for t in range(1, 6))
    panel = Panel(periods)
    for select in (select_j_star, select_j_factor):
        res = select(panel, 1.0, 0.0, grid=[3, 5, 8, 13])
        assert res.selected == 3
        assert np.all(res.b_hat == 0.0)
        assert res.j_star_sequence.tolist() == [3] * 5
        assert res.j_factor_sequence.tolist() == [3] * 5


def test_grid_errors():
    panel = draw_panel(preset("quadratic", T=3, n=100)).panel
    with pytest.raises(EmptyGrid):
        select_j_star(panel, 1.0, 0.0, grid=[])
    with pytest.raises(JTooLarge):
        select_j_star(panel, 1.0, 0.0, grid=[2, 60])
    with pytest.raises(JTooLarge):
        bias_constant_hat(panel, 1.0, 0.0, 51)


def test_bias_constant_scales_with_slope():
    b_hats = {}
    for b in (1.0, 2.0, 4.0):
        spec = preset("linear", mu_params={"b": b}, n=5000, T=50)
        b_hats[b] = np.mean([bias_constant_hat(draw_panel(spec, r).panel, 1.0, 0.0, 8)
                             for r in range(20)])
    assert b_hats[2.0] / b_hats[1.0] == pytest.approx(2.0, rel=0.25)
    assert b_hats[4.0] / b_hats[2.0] == pytest.approx(2.0, rel=0.25)
    # linear mu on uniform z has boundary bias -b/J at each end
    assert b_hats[1.0] == pytest.approx(-1.0, rel=0.25)


def test_bias_constant_flat_is_zero():
    spec = preset("null", n=2000, T=50)
    b = np.array([bias_constant_hat(draw_panel(spec, r).panel, 1.0, 0.0, 8) for r in range(40)])
    assert abs(b.mean()) < 3 * b.std(ddof=1) / np.sqrt(b.size)


def test_bias_constant_pilot_robust():
    spec = preset("quadratic", n=2000, T=50)
    means = [np.mean([bias_constant_hat(draw_panel(spec, r).panel, 1.0, 0.0, jp)
                      for r in range(20)]) for jp in (5, 10)]
    assert np.sign(means[0]) == np.sign(means[1]) == -1
    assert means[1] / means[0] == pytest.approx(1.0, rel=0.30)


def test_v1_matches_uniform_closed_form():
    spec = preset("null", n=5000, T=50)
    v1 = [variance_constants_hat(draw_panel(spec, r).panel, 1.0, 0.0, 20)[0] for r in range(30)]
    assert np.mean(v1) == pytest.approx(2.0, rel=0.15)


def test_constants_scale_with_noise_variance():
    a = draw_panel(preset("null", n=1000, T=10, sigma=1.0)).panel
    b = draw_panel(preset("null", n=1000, T=10, sigma=np.sqrt(2.0))).panel
    va = variance_constants_hat(a, 1.0, 0.0, 10)
    vb = variance_constants_hat(b, 1.0, 0.0, 10)
    np.testing.assert_allclose(vb, 2.0 * np.array(va), rtol=1e-10)


def test_v2_over_v1_binomial_ratio():
    J = 10
    v1, v2 = variance_constants_hat(draw_panel(preset("null", n=5000, T=50)).panel, 1.0, 0.0, J)
    assert v2 / v1 == pytest.approx(1 - 1 / J, rel=0.02)


def test_j_star_increases_with_ramp():
    spec = preset("quadratic", n=400, n_end=1600, T=30)
    res = select_j_star(draw_panel(spec).panel, spec.z_H, spec.z_L)
    assert np.all(np.diff(res.j_star_sequence) >= 0)
    assert res.j_star_sequence[-1] > res.j_star_sequence[0]
    uni = select_j_star(draw_panel(spec).panel, spec.z_H, spec.z_L, uniform=True)
    assert len(set(uni.j_star_sequence.tolist())) == 1


def test_factor_below_star_when_n_large():
    spec = preset("quadratic", n=4000, T=20)
    res = select_j_star(draw_panel(spec).panel, spec.z_H, spec.z_L, grid=[4, 8, 16, 32, 64])
    assert np.all(res.j_factor_sequence < res.j_star_sequence)
    assert res.constants == "plug-in"


def test_per_candidate_pilot_mode_runs():
    spec = preset("quadratic", n=1000, T=20)
    res = select_j_star(draw_panel(spec).panel, spec.z_H, spec.z_L, grid=[4, 8, 16, 32],
                        pilot_mode="per_candidate")
    assert len(set(res.b_hat.tolist())) > 1
    assert res.selected in (4, 8, 16, 32)
