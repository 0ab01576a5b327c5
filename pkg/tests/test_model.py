import numpy as np
import pytest

from hardhank.model import (
    ConstraintRegime,
    EconomyState,
    PenaltyWeights,
    PolicyBundle,
    ShockDraw,
    cash_on_hand,
    draw_shocks,
    firm_block,
    shock_step,
    state_transition,
    steady_state,
    taylor_rate,
)
from hardhank.rng import stream
from tests.helpers import baseline_params


def _state(b_prev, r_prev=1.0, s_prev=None, psi=1.0, tfp=1.0, c_prev=1.0):
    b_prev = np.atleast_2d(np.asarray(b_prev, dtype=float))
    return EconomyState(
        b_prev=b_prev,
        s_prev=np.ones_like(b_prev) if s_prev is None else np.atleast_2d(s_prev),
        c_prev=np.full((b_prev.shape[0], 1), c_prev),
        r_prev=np.full((b_prev.shape[0], 1), r_prev),
        psi_prev=np.full((b_prev.shape[0], 1), psi),
        a_prev=np.full((b_prev.shape[0], 1), tfp),
    )


def _bundle(b, c, y):
    b = np.atleast_2d(np.asarray(b, dtype=float))
    ones = np.ones((b.shape[0], 1))
    return PolicyBundle(
        pi=ones, w=ones * 0.9, c=np.atleast_2d(c), h=np.ones_like(b), mu=np.zeros_like(b), b=b,
        n=ones, y=ones * y, mc=ones * 0.9, div=ones * 0.1, r=ones * 1.01, omega=np.ones_like(b),
        psi=ones, s=np.ones_like(b), tfp=ones, binding=np.zeros(b.shape, dtype=bool),
    )


def test_shock_step_fixed_point_and_mean_one_rescale():
    params = baseline_params(3)
    state = _state(np.zeros((1, 3)), s_prev=np.full((1, 3), 1.7))
    shocks = ShockDraw.zeros(1, 3)
    shocks.eps_s[:] = 0.4
    psi, s, tfp = shock_step(state, shocks, params)
    assert psi.tolist() == [[1.0]]
    assert s == pytest.approx(np.ones((1, 3)), abs=1e-15)
    assert tfp.tolist() == [[1.0]]


def test_shock_step_tfp_closed_form():
    params = baseline_params(2, rho_a=0.8, sigma_a=0.008)
    shocks = ShockDraw.zeros(1, 2)
    shocks.eps_a[:] = 2.0
    _, _, tfp = shock_step(_state(np.zeros((1, 2))), shocks, params)
    assert tfp[0, 0] == pytest.approx(np.exp(0.016), rel=1e-14)


def test_taylor_rate_steady_state_and_floor():
    params = baseline_params()
    r_bar = params.r_bar
    assert r_bar == pytest.approx(1.005 / 0.9975, abs=1e-12)
    rate = taylor_rate(np.array([[params.pi_bar]]), np.array([[params.y_bar]]), np.array([[r_bar]]), np.zeros((1, 1)), params)
    assert rate[0, 0] == pytest.approx(r_bar, abs=1e-12)
    deflation = taylor_rate(np.array([[0.9]]), np.array([[0.8]]), np.array([[1.0]]), np.zeros((1, 1)), params)
    assert deflation.tolist() == [[1.0]]


def test_taylor_rate_static_rule_without_inertia():
    params = baseline_params(rho_r=0.0)
    pi = np.array([[1.01]])
    rate = taylor_rate(pi, np.array([[1.0]]), np.array([[1.3]]), np.zeros((1, 1)), params)
    expected = params.r_bar * (1.01 / params.pi_bar) ** params.theta_pi
    assert rate[0, 0] == pytest.approx(expected, rel=1e-12)


def test_marginal_cost_anchor():
    assert baseline_params().mc_star == pytest.approx(10.0 / 11.0, abs=1e-12)


def test_firm_block_arithmetic():
    params = baseline_params(2)
    n, y, mc, div = firm_block(np.array([[0.9]]), np.ones((1, 2)), np.ones((1, 2)), np.array([[1.0]]), params)
    assert (n[0, 0], y[0, 0]) == (1.0, 1.0)
    assert mc[0, 0] == pytest.approx(0.9)
    assert div[0, 0] == pytest.approx(0.1)
    _, _, mc_double, _ = firm_block(np.array([[1.8]]), np.ones((1, 2)), np.ones((1, 2)), np.array([[2.0]]), params)
    assert mc_double[0, 0] == pytest.approx(mc[0, 0])


def test_firm_block_preconditions():
    params = baseline_params(2)
    with pytest.raises(ValueError):
        firm_block(np.array([[1.0]]), np.ones((1, 2)), np.ones((1, 2)), np.array([[1.0]]), params)
    with pytest.raises(ValueError):
        firm_block(np.array([[0.5]]), np.zeros((1, 2)), np.ones((1, 2)), np.array([[1.0]]), params)


def test_cash_on_hand_example():
    params = baseline_params(1)
    state = _state([[0.04]], r_prev=1.0025)
    omega = cash_on_hand(state, np.array([[0.9]]), np.ones((1, 1)), np.ones((1, 1)), np.array([[0.1]]), np.array([[1.0]]), params)
    assert omega[0, 0] == pytest.approx(1.0401, abs=1e-12)


def test_cash_on_hand_sums_to_output_with_zero_net_bonds():
    params = baseline_params(4)
    rng = stream(0, "test-omega")
    b_prev = rng.normal(size=(3, 4))
    b_prev -= b_prev.mean(axis=1, keepdims=True)
    h = np.exp(rng.normal(size=(3, 4)))
    s = np.exp(rng.normal(size=(3, 4)))
    s /= s.mean(axis=1, keepdims=True)
    w, tfp, pi = np.full((3, 1), 0.8), np.full((3, 1), 1.1), np.full((3, 1), 1.004)
    _, y, _, div = firm_block(w, h, s, tfp, params)
    omega = cash_on_hand(_state(b_prev, r_prev=1.01), w, s, h, div, pi, params)
    assert omega.mean(axis=1, keepdims=True) == pytest.approx(y, abs=1e-12)


def test_steady_state_satisfies_invariants():
    params = baseline_params(3)
    state = steady_state(params, 4)
    state.validate(params, hard=True)
    assert state.batch_size == 4 and state.n_agents == 3
    assert np.all(state.b_prev.mean(axis=1) == 0.0)
    assert np.array_equal(state.b_prev, steady_state(params, 4).b_prev)


def test_state_transition_carries_bond_imbalance():
    state = _state(np.zeros((1, 2)))
    following = state_transition(state, _bundle([[0.03, -0.01]], [[1.0, 0.98]], 1.0))
    assert following.b_prev.mean() == pytest.approx(0.01)
    assert following.c_prev[0, 0] == pytest.approx(0.99)
    assert following.r_prev[0, 0] == pytest.approx(1.01)


def test_with_impulse_only_touches_named_innovation():
    base = draw_shocks(stream(0, "test-shock"), 2, 3)
    shocked = base.with_impulse("tfp", 2.0)
    assert np.array_equal(shocked.eps_a, base.eps_a + 2.0)
    assert np.array_equal(shocked.eps_mp, base.eps_mp)
    idio = base.with_impulse("idio", 1.0)
    assert np.array_equal(idio.eps_s[:, 1:], base.eps_s[:, 1:])
    assert np.array_equal(idio.eps_s[:, 0], base.eps_s[:, 0] + 1.0)
    with pytest.raises(ValueError):
        base.with_impulse("fiscal", 1.0)


def test_params_validation_rejects_bad_values():
    with pytest.raises(ValueError):
        baseline_params(b_min=0.1).validate()
    with pytest.raises(ValueError):
        baseline_params(phi=1300.0).validate({"phi": (700.0, 1200.0)})
    baseline_params().validate()


def test_regime_default_weights():
    assert ConstraintRegime.HARD.default_weights() == PenaltyWeights(0.0, 0.0, 0.0)
    assert ConstraintRegime.SOFT.default_weights(1e2) == PenaltyWeights(1e2, 1e2, 1e2)
    assert ConstraintRegime.AGG_HARD.default_weights(1e2) == PenaltyWeights(kkt=1e2)
    assert ConstraintRegime.IDIO_HARD.default_weights(1e2) == PenaltyWeights(oc=1e2, rc=1e2)
    assert ConstraintRegime.parse("Agg-Hard") is ConstraintRegime.AGG_HARD
    with pytest.raises(ValueError):
        ConstraintRegime.parse("medium")
