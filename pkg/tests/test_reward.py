import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riskward.metrics import MetricContext, ZeroVarianceError, component_values
from riskward.reward import (
    COMPONENTS, RewardError, RewardWeights, composite_reward, decompose, finite_difference_check,
    reward_bound, reward_gradient,
)

import oracles

CTX = MetricContext()
CAP = 4.0 ** (1 / 252) - 1
weight_vectors = st.tuples(*[st.floats(0.0, 2.0)] * 4).map(RewardWeights.from_sequence)


def instance(seed, T=50, scale=0.01):
    rng = np.random.default_rng(seed)
    m = rng.normal(0.0005, scale, T)
    p = 0.8 * m + rng.normal(0.0, scale, T)
    b = m + rng.normal(0.0, scale / 4, T)
    return p, b, m


def test_weights_validation_and_parsing():
    assert RewardWeights.parse("1,0,0.5,0.5") == RewardWeights(1, 0, 0.5, 0.5)
    with pytest.raises(RewardError):
        RewardWeights(-0.1, 0, 0, 0)
    with pytest.raises(RewardError):
        RewardWeights.parse("1,2,3")
    with pytest.raises(RewardError):
        RewardWeights(0, 0, 0, 0).normalized()


@given(weight_vectors.filter(lambda w: sum(w) > 0))
def test_normalized_sums_to_one(w):
    assert math.fsum(w.normalized()) == pytest.approx(1.0, abs=1e-12)


def test_single_term_is_annualized_return():
    p, b, m = instance(0)
    bd = composite_reward(p, b, m, RewardWeights(1, 0, 0, 0), CTX)
    assert bd.total == bd.components.r_ann


def test_all_zero_returns_give_zero():
    z = np.zeros(20)
    m = np.sin(np.arange(20)) * 0.01
    bd = composite_reward(z, z, m, RewardWeights(0.3, 0.2, 0.4, 0.1), CTX)
    assert bd.total == 0.0
    assert bd.components.beta_clamped == 0.3


def test_equal_weights_hand_summed():
    p, b, m = instance(42)
    w = (0.25, 0.25, 0.25, 0.25)
    bd = composite_reward(p, b, m, RewardWeights(*w), CTX)
    assert bd.total == pytest.approx(oracles.composite(list(p), list(b), list(m), w), rel=1e-12)
    assert bd.total == pytest.approx(math.fsum(bd.terms), abs=1e-12)


def test_zero_market_variance_propagates_unless_unused():
    p = np.array([0.01, -0.02, 0.005])
    flat = np.zeros(3)
    with pytest.raises(ZeroVarianceError):
        composite_reward(p, flat, flat, RewardWeights(), CTX)
    bd = composite_reward(p, flat, flat, RewardWeights(1, 1, 0, 0), CTX)
    assert math.isfinite(bd.total)


def test_downside_gradient_two_period_example():
    r = np.array([-0.02, 0.01])
    m = np.array([0.01, -0.01])
    w = RewardWeights(0, 1, 0, 0)
    g = reward_gradient(r, m, m, w, CTX)
    sigma = math.sqrt(0.02 ** 2 / 2)
    # oracle: central difference of the downside penalty, h = 1e-7
    h = 1e-7
    fd = (-oracles.downside([-0.02 + h, 0.01]) + oracles.downside([-0.02 - h, 0.01])) / (2 * h)
    assert g.components["sigma_down"][0] == pytest.approx(-0.02 / (2 * sigma), rel=1e-12)
    assert g.components["sigma_down"][0] == pytest.approx(-0.70711, abs=1e-5)
    assert g.d_returns[0] == pytest.approx(fd, rel=1e-6)
    assert g.d_returns[0] == pytest.approx(0.70711, abs=1e-5)
    assert g.d_returns[1] == 0.0


def test_linear_gradient_constant():
    r = np.linspace(-0.01, 0.02, 10)
    g = reward_gradient(r, r, r, RewardWeights(1, 0, 0, 0), CTX)
    np.testing.assert_allclose(g.d_returns, 25.2, rtol=1e-14)


def test_all_positive_downside_gradient_zero():
    r = np.abs(np.random.default_rng(3).normal(0, 0.01, 12)) + 1e-4
    g = reward_gradient(r, r, -r, RewardWeights(0, 1, 0, 0), CTX)
    np.testing.assert_array_equal(g.d_returns, 0.0)


def test_benchmark_partial_and_scalars():
    p, b, m = instance(5)
    w = RewardWeights(0.1, 0.2, 0.3, 0.4)
    g = reward_gradient(p, b, m, w, CTX)
    beta = g.beta_clamped
    assert g.d_mu_b == pytest.approx(-0.3 / beta, rel=1e-15)
    assert g.d_sigma_down == -0.2
    assert g.d_mu == pytest.approx(0.1 * 252 + 0.3 / beta + 0.4 * 252 / beta, rel=1e-14)


@pytest.mark.parametrize("mode", ["approx", "exact"])
def test_finite_difference_random_instance(mode):
    p, b, m = instance(9)
    p[np.abs(p) < 1e-6] = 1e-3
    rep = finite_difference_check(p, b, m, RewardWeights(0.3, 0.3, 0.2, 0.2), CTX, mode=mode)
    assert rep.passed, rep.summary()
    assert set(rep.checks) == {*COMPONENTS, "total"}


def test_finite_difference_linear_only_is_exact():
    p, b, m = instance(10)
    rep = finite_difference_check(p, b, m, RewardWeights(0.5, 0.0, 0.3, 0.2), CTX, h=1e-4, tol=1e-10)
    assert rep.passed, rep.summary()
    assert rep.checks["sigma_down"].skipped and rep.checks["sigma_down"].note == "zero weight"
    assert max(rep.checks[k].max_rel_error for k in ("r_ann", "d_ret", "t_ry", "total")) < 1e-10


def test_finite_difference_kink_excluded():
    p, b, m = instance(11, T=10)
    p[4] = 0.0
    rep = finite_difference_check(p, b, m, RewardWeights(), CTX)
    assert rep.kink_mask[4] and rep.kink_mask.sum() == 1
    assert rep.passed
    assert reward_gradient(p, b, m, RewardWeights(), CTX).components["sigma_down"][4] == 0.0


def test_finite_difference_detects_wrong_sign():
    p, b, m = instance(12)

    def broken(*args, **kwargs):
        g = reward_gradient(*args, **kwargs)
        comps = dict(g.components, sigma_down=-g.components["sigma_down"])
        return type(g)(g.d_returns, comps, g.d_mu, g.d_sigma_down, g.d_mu_b, g.kink_mask, g.beta_clamped)

    rep = finite_difference_check(p, b, m, RewardWeights(), CTX, gradient_fn=broken)
    assert not rep.passed
    assert "sigma_down" in {c.name for c in rep.failures}


def test_decompose_examples():
    p, b, m = instance(13)
    bd = composite_reward(p, b, m, RewardWeights(0, 1, 0, 0), CTX)
    ret, risk, bench = decompose(bd)
    assert ret == 0.0 and bench == 0.0 and risk < 0.0
    pos = np.abs(p) + 1e-4
    assert decompose(composite_reward(pos, b, m, RewardWeights(), CTX))[1] == 0.0


def test_decompose_additive_on_1000_inputs():
    rng = np.random.default_rng(14)
    for k in range(1000):
        p, b, m = rng.uniform(-CAP, CAP, (3, 30))
        w = RewardWeights.from_sequence(rng.uniform(0, 1, 4))
        bd = composite_reward(p, b, m, w, CTX)
        parts = decompose(bd)
        assert parts[1] <= 0.0
        assert math.fsum(parts) == pytest.approx(bd.total, abs=1e-12)


@given(weight_vectors, weight_vectors, st.floats(0, 3), st.floats(0, 3), st.integers(0, 1000))
def test_linearity_in_weights(w, v, a, c, seed):
    p, b, m = instance(seed, T=20)
    mixed = RewardWeights.from_sequence(a * w.as_array() + c * v.as_array())
    lhs = composite_reward(p, b, m, mixed, CTX).total
    rhs = a * composite_reward(p, b, m, w, CTX).total + c * composite_reward(p, b, m, v, CTX).total
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_breakdown_json_fields():
    p, b, m = instance(15)
    d = json.loads(composite_reward(p, b, m, RewardWeights(), CTX).to_json())
    assert set(d) == {"total", "mode", "weights", "components", "terms", "decomposition"}
    assert set(d["decomposition"]) == {"return_reward", "risk_penalty", "benchmark_bonus"}


def test_reward_bound_formula():
    w = RewardWeights(1, 2, 3, 4)
    assert reward_bound(w, CTX) == pytest.approx(3 + 6 + 3 * 20 + 4 * 2520, rel=1e-15)
