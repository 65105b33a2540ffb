import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from holoprop import estimators as E
from holoprop.dynamics import ConvergenceError, NudgePath, SettleConfig
from holoprop.model import ScalarToy
from holoprop.oracle import cosine_similarity, relative_error, unrolled_adjoint_gradient
from holoprop.tensor import DivergenceError

from conftest import flat

TOY_X, TOY_Y = np.zeros((1, 1)), np.ones((1, 1))


def toy_setup(theta=2.0, instant=False):
    toy = ScalarToy(instant=instant)
    return toy, toy.init_params(theta=theta)


@pytest.mark.parametrize("beta", [0.25, 0.5])
def test_classic_ep_on_toy(beta):
    toy, p = toy_setup()
    est = E.classic_ep(toy, p, TOY_X, TOY_Y, beta, SettleConfig(500, 1e-14))
    assert est["theta"][0] == pytest.approx((2 - 1) / (1 + beta), abs=1e-12)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_hep_on_toy_has_geometric_bias(n):
    toy, p = toy_setup()
    est = E.hep_estimate(toy, p, TOY_X, TOY_Y, NudgePath(0.5, n), SettleConfig(500, 1e-14))
    assert est["theta"][0] == pytest.approx((2 - 1) / (1 - 0.5 ** n), abs=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 0.7), st.integers(2, 12))
def test_toy_hep_matches_fourier_sum_of_fixed_points(theta, y, radius, n):
    # exact answer from the closed-form fixed points
    path = NudgePath(radius, n)
    fp = (theta + path.points * y) / (1 + path.points)
    exact = np.real(np.sum(-fp * np.exp(-1j * path.angles)) / (n * radius))
    toy = ScalarToy(instant=True)
    est = E.hep_estimate(toy, toy.init_params(theta=theta), TOY_X, np.full((1, 1), y), path, SettleConfig(3, 0.0))
    assert est["theta"][0] == pytest.approx(exact, abs=1e-12)


def test_classic_ep_rejects_non_positive_beta(mlp):
    with pytest.raises(ValueError):
        E.classic_ep(mlp.model, mlp.params, mlp.x, mlp.y, 0.0)
    with pytest.raises(ValueError):
        E.classic_ep(mlp.model, mlp.params, mlp.x, mlp.y, -0.1)


def test_hep_matches_adjoint_on_mlp(mlp, tight):
    oracle = unrolled_adjoint_gradient(mlp.model, mlp.params, mlp.x, mlp.y, 1000)
    est = E.hep_estimate(mlp.model, mlp.params, mlp.x, mlp.y, NudgePath(0.1, 24), tight)
    assert cosine_similarity(est, oracle).total > 0.999999
    assert est.imag_ratio < 1e-8
    assert all(est.converged)


def test_traces_are_reused_and_kept(mlp, tight):
    est = E.hep_estimate(mlp.model, mlp.params, mlp.x, mlp.y, NudgePath(0.2, 6), tight)
    traces = est.extras["traces"]
    again = E.hep_estimate(mlp.model, mlp.params, mlp.x, mlp.y, traces.path, tight, traces=traces)
    np.testing.assert_array_equal(flat(est), flat(again))
    assert len(traces.grads) == 6 and traces.free is not None


def test_cold_and_warm_starts_agree_inside_stable_region(mlp, tight):
    cold = E.hep_estimate(mlp.model, mlp.params, mlp.x, mlp.y, NudgePath(0.3, 8),
                          SettleConfig(1000, 1e-12, warm_start=False))
    warm = E.hep_estimate(mlp.model, mlp.params, mlp.x, mlp.y, NudgePath(0.3, 8), tight)
    assert relative_error(cold, warm) < 1e-9


def test_projections_equal_hep_real_part(mlp, tight):
    est = E.hep_estimate(mlp.model, mlp.params, mlp.x, mlp.y, NudgePath(0.1, 24), tight)
    traces = est.extras["traces"]
    for proj in (E.real_projection_estimate(traces), E.imag_projection_estimate(traces)):
        assert np.max(np.abs(flat(proj) - flat(est))) < 1e-10


@given(st.integers(3, 16), st.floats(0.1, 2.0),
       arrays(np.complex128, 5, elements=st.complex_numbers(max_magnitude=3, allow_nan=False)))
def test_projections_are_exact_for_a_circle_of_analytic_samples(n, radius, coeffs):
    # g(beta) = sum_p c_p beta^p with real c_p; the first mode is c_1 unless an alias p = -1 (mod n) exists
    c = np.real(coeffs)
    angles = 2 * np.pi * np.arange(n) / n
    beta = radius * np.exp(1j * angles)
    samples = sum(c[p] * beta ** p for p in range(5))
    re = E.real_projection_estimate(samples, radius)
    im = E.imag_projection_estimate(samples, radius)
    if n > 5:
        assert re == pytest.approx(c[1], abs=1e-10)
        assert im == pytest.approx(c[1], abs=1e-10)
    assert (re + im) / 2 == pytest.approx(c[1] + sum(c[p] * radius ** (p - 1) for p in range(2, 5) if (p - 1) % n == 0),
                                          abs=1e-9)


def test_projections_need_three_samples():
    with pytest.raises(ValueError, match="at least 3"):
        E.real_projection_estimate(np.ones((2, 3)), 0.1)
    with pytest.raises(ValueError, match="radius"):
        E.imag_projection_estimate(np.ones((4, 3)))


def test_online_on_instant_toy_recovers_gradient():
    toy, p = toy_setup(instant=True)
    est = E.online_estimate(toy, p, TOY_X, TOY_Y, E.OnlineConfig(512, 512, 1, 0.25))
    path = NudgePath(0.25, 512, np.pi / 512)
    ref = E.hep_estimate(toy, p, TOY_X, TOY_Y, path, SettleConfig(2, 0.0))
    assert est["theta"][0] == pytest.approx(ref["theta"][0], abs=1e-12)
    assert est["theta"][0] == pytest.approx(1 / (1 - 0.25 ** 512), abs=1e-12)


def test_online_history_and_plasticity_bookkeeping(mlp):
    ocfg = E.OnlineConfig(20, 40, 4, 0.1)
    est = E.online_estimate(mlp.model, mlp.params, mlp.x, mlp.y, ocfg)
    assert len(est.extras["history"]) == 4 and len(est.extras["plasticity"]) == 2
    assert est.extras["step_residuals"].shape == (80,)
    np.testing.assert_array_equal(flat(est.extras["plasticity"][-1]), flat(est.extras["history"][-1]))


@pytest.mark.parametrize("args", [(0, 10, 1, 0.1), (20, 10, 1, 0.1), (3, 10, 1, 0.1), (5, 10, 0, 0.1),
                                  (5, 10, 1, 0.0)])
def test_online_config_validation(args):
    with pytest.raises(ValueError):
        E.OnlineConfig(*args)


def test_unaligned_plasticity_allowed():
    assert E.OnlineConfig(3, 10, 4, 0.1, aligned=False).t_plas == 10


def test_divergence_names_the_offending_beta():
    toy, p = toy_setup()
    with pytest.raises(DivergenceError) as info:
        E.hep_estimate(toy, p, TOY_X, TOY_Y, NudgePath(1.5, 4), SettleConfig(300, 1e-10))
    assert info.value.index == 0 and abs(info.value.beta) == pytest.approx(1.5)


def test_unconverged_settle_raises_convergence_error(mlp):
    with pytest.raises(ConvergenceError):
        E.hep_estimate(mlp.model, mlp.params, mlp.x, mlp.y, NudgePath(0.1, 4), SettleConfig(3, 1e-12))


def test_fixed_budget_never_raises_for_slow_settles(mlp):
    est = E.hep_estimate(mlp.model, mlp.params, mlp.x, mlp.y, NudgePath(0.1, 4), SettleConfig(3, 0.0))
    assert np.all(np.isfinite(flat(est)))


def test_noisy_classic_realizations_use_independent_streams(mlp):
    cfg = SettleConfig(60, 0.0, noise_std=0.05, rng_seed=1)
    one = E.classic_ep(mlp.model, mlp.params, mlp.x, mlp.y, 0.2, cfg)
    again = E.classic_ep(mlp.model, mlp.params, mlp.x, mlp.y, 0.2, cfg)
    many = E.classic_ep(mlp.model, mlp.params, mlp.x, mlp.y, 0.2, cfg, realizations=4)
    np.testing.assert_array_equal(flat(one), flat(again))
    assert not np.allclose(flat(one), flat(many))


def test_bias_probe_slope_on_toy():
    toy, p = toy_setup()
    oracle = {"theta": np.array([1.0])}
    probe = E.bias_scaling_probe(toy, p, TOY_X, TOY_Y, 2, [0.05, 0.1, 0.2], SettleConfig(500, 1e-14), oracle)
    assert probe.slope == pytest.approx(2.0, abs=0.05)
    with pytest.raises(ValueError):
        E.bias_scaling_probe(toy, p, TOY_X, TOY_Y, 2, [0.1, 0.2], oracle=oracle)
