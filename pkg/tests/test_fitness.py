import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdsr.expr import Expression
from qdsr.fitness import (
    Dataset,
    DegenerateTarget,
    assess,
    check_termination,
    cost_C,
    nrmse,
    nrmse_from_values,
    reward,
)

E = Expression.from_text


def identity_data():
    return Dataset.from_oracle(np.array([0.0, 0.5, 1.0]), lambda x: x)


def test_perfect_candidate_costs_zero():
    d = Dataset.from_oracle(np.linspace(0, 1, 11), lambda x: x * x + x)
    assert cost_C(E("x x * x +"), (), d) == 0.0
    assert reward(0.0, d) == 1.0


def test_hand_computed_cost():
    # target x on {0, 0.5, 1}, candidate 0: values 0 + 0.5 + 1, slopes 3 * |1 - 0|
    d = identity_data()
    assert cost_C(E("x x -"), (), d) == pytest.approx(4.5, abs=1e-9)
    # n = 3, spread A = 1 -> reward = 2 / (1 + 4.5 / 6) - 1
    assert reward(4.5, d) == pytest.approx(2 / 1.75 - 1)


def test_domain_failure_is_failed():
    d = identity_data()
    assert cost_C(E("x ln"), (), d) is None
    assert reward(None, d) == -1.0
    rep = assess(E("x ln"), (), d)
    assert rep.failed and rep.reward == -1.0


def test_perturbed_only_failure_is_skipped():
    # sqrt-like x^0.5 fails at 0 - h but not at 0; the derivative entry is
    # skipped and the candidate keeps a finite cost
    d = identity_data()
    assert cost_C(E("x 1 2 / ^"), (), d) is not None


def test_reward_is_decreasing_and_bounded():
    d = identity_data()
    costs = [0, 1e-9, 0.1, 1, 10, 1e3, 1e9]
    rs = [reward(c, d) for c in costs]
    assert all(a > b for a, b in zip(rs, rs[1:]))
    # saturates at -1 in floating point for astronomically large costs
    rs.append(reward(1e300, d))
    assert all(a >= b for a, b in zip(rs, rs[1:]))
    assert all(-1 <= r <= 1 for r in rs)
    assert rs[-1] == pytest.approx(-1.0)


def test_nrmse_definitions():
    x = np.linspace(0, 2, 50)
    t = x**3
    assert nrmse_from_values(np.full_like(t, t.mean()), t) == pytest.approx(1.0)
    assert nrmse_from_values(t + t.std(), t) == pytest.approx(1.0)
    with pytest.raises(DegenerateTarget):
        nrmse_from_values(t, np.ones_like(t))


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3), st.integers(0, 1000))
def test_nrmse_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=30)
    p = t + rng.normal(scale=0.1, size=30)
    assert nrmse_from_values(c * p, c * t) == pytest.approx(nrmse_from_values(p, t), rel=1e-9)


def test_exact_match_nrmse_is_tiny():
    x = np.random.default_rng(0).uniform(0, 2, 200)
    d = Dataset.from_oracle(x, lambda x: x**3)
    assert nrmse(E("x x * x *"), (), d) <= 1e-12


def test_near_exact_exponent_is_a_hit():
    x = np.random.default_rng(1).uniform(0, 2, 200)
    d = Dataset.from_oracle(x, lambda x: x**3)
    assert check_termination(E("x A0 ^"), np.array([2.99999999]), d)


def test_nguyen7_rational_approximation_misses():
    x = np.random.default_rng(3).uniform(0, 3, 200)
    d = Dataset.from_oracle(x, lambda x: np.log1p(x) + np.log1p(x**2))
    cand = E("A0 A1 x * A2 x A3 ^ + A4 x A5 ^ x A6 ^ + A7 + / - * x A8 + / +")
    a = np.array([0.000219974, 0.562568, 12.9747, 0.593097, 8.99871, 2.30042, 1.17464, 1.343, 3.57942])
    v = nrmse(cand, a, d)
    assert 1e-6 < v < 1e-4
    assert not check_termination(cand, a, d)


def test_failed_candidate_is_a_miss():
    val = Dataset.from_oracle(np.linspace(0, 1, 20), lambda x: x + 1)
    assert not check_termination(E("x ln"), (), val)


def test_central_differences_exact_for_quadratics():
    x = np.linspace(0, 3, 31)
    d = Dataset.from_oracle(x, lambda x: 2 * x * x - x + 1)
    np.testing.assert_allclose(d.target_grads[0], 4 * x - 1, rtol=1e-8, atol=1e-8)


def test_finite_difference_order(monkeypatch):
    # halving the stencil step shrinks the derivative error of sin about 4-fold
    import qdsr.fitness as fit

    x = np.linspace(0.1, 1.0, 10)
    rels = np.array([1e-1, 5e-2, 2.5e-2, 1.25e-2])
    errs = []
    for rel in rels:
        monkeypatch.setattr(fit, "FD_REL_STEP", rel)
        d = Dataset.from_oracle(x, np.sin)
        errs.append(np.max(np.abs(d.target_grads[0] - np.cos(x))))
    order = np.polyfit(np.log(rels), np.log(errs), 1)[0]
    assert order >= 1.9


def test_two_dimensional_stencil():
    g = np.array([[a, b] for a in np.linspace(0, 1, 5) for b in np.linspace(0, 2, 5)])
    d = Dataset.from_oracle(g, lambda x, y: x * y)
    assert d.stacked.shape == (25 * 5, 2)
    np.testing.assert_allclose(d.target_grads[0], g[:, 1], atol=1e-9)
    np.testing.assert_allclose(d.target_grads[1], g[:, 0], atol=1e-9)
    assert cost_C(E("x y *"), (), d) == 0.0
