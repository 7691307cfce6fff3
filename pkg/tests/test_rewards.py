import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maad.data import ObsTrajectory, Transitions
from maad.errors import ContractViolation
from maad.numkit import finite_difference_grad, max_relative_error
from maad.rewards import (
    Discriminator,
    ail_reward,
    ail_reward_from_prob,
    ail_rewards,
    cosine_cost,
    disc_loss,
    ot_rewards,
    sinkhorn,
    tm_rewards,
)


def pairs(rng, n, sd=2, shift=0.0):
    s = rng.normal(size=(n, sd)) + shift
    return Transitions(s, s + 0.1 * rng.normal(size=(n, sd)))


def constant_disc(sd=2):
    D = Discriminator(sd, hidden=(4,), rng=0)
    D.net.weights[-1][...] = 0.0
    D.net.biases[-1][...] = 0.0
    return D


def test_half_discriminator_bce():
    rng = np.random.default_rng(0)
    _, _, info = disc_loss(constant_disc(), pairs(rng, 10), pairs(rng, 12), gp_coef=0.0)
    assert info["bce"] == pytest.approx(np.log(2.0), abs=1e-12)


def test_separating_discriminator_bce_vanishes():
    D = Discriminator(1, hidden=(1,), rng=0)
    D.net.weights[0][...] = [[1.0], [0.0]]
    D.net.weights[1][...] = 100.0
    ones, neg = np.ones((8, 1)), -np.ones((8, 1))
    _, _, info = disc_loss(D, Transitions(ones, ones), Transitions(neg, neg), gp_coef=0.0)
    assert info["bce"] < 1e-20


def test_disc_loss_requires_both_sets():
    rng = np.random.default_rng(0)
    empty = Transitions(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ContractViolation):
        disc_loss(constant_disc(), empty, pairs(rng, 3))


@pytest.mark.parametrize("seed", range(3))
def test_disc_loss_gradient_with_penalty(seed):
    rng = np.random.default_rng(seed)
    D = Discriminator(2, hidden=(6, 5), rng=rng)
    e, a = pairs(rng, 7, shift=1.0), pairs(rng, 9)
    mix = rng.random(7)
    _, grads, info = disc_loss(D, e, a, 10.0, mix=mix)
    assert info["gp"] > 0
    numeric = finite_difference_grad(lambda: disc_loss(D, e, a, 10.0, mix=mix)[0], D.params())
    assert max_relative_error(grads, numeric) <= 1e-4


def test_ail_reward_values():
    assert ail_reward_from_prob(0.5) == pytest.approx(0.6931, abs=1e-4)
    assert ail_reward_from_prob(1e-6) == pytest.approx(1e-6, rel=1e-5)
    assert ail_reward_from_prob(1.0) == pytest.approx(13.8155, abs=1e-4)
    assert ail_reward_from_prob(0.0) >= 0.0
    assert ail_reward(constant_disc(), np.zeros(2), np.ones(2)) == pytest.approx(np.log(2.0))


def test_ail_reward_monotone_and_non_negative():
    d = np.linspace(1e-6, 1 - 1e-6, 1001)
    r = ail_reward_from_prob(d)
    assert np.all(np.diff(r) > 0) and np.all(r >= 0)
    rng = np.random.default_rng(1)
    D = Discriminator(2, rng=rng)
    assert np.all(ail_rewards(D, rng.normal(size=(50, 2)), rng.normal(size=(50, 2))) >= 0)


def test_tm_examples():
    rng = np.random.default_rng(0)
    t = ObsTrajectory(rng.normal(size=(20, 3)))
    assert np.all(tm_rewards(t, t) == 0)
    assert tm_rewards(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]))[0] == -1.0
    longer = ObsTrajectory(rng.normal(size=(30, 3)))
    r = tm_rewards(t, longer)
    assert len(r) == 20 and np.all(r <= 0)
    with pytest.raises(ContractViolation):
        tm_rewards(np.zeros((3, 2)), np.zeros((3, 3)))


def test_cosine_examples():
    x = np.array([[1.0, 0.0]])
    assert cosine_cost(x, x)[0, 0] == pytest.approx(0.0, abs=1e-7)
    assert cosine_cost(x, np.array([[0.0, 2.0]]))[0, 0] == pytest.approx(1.0)
    assert cosine_cost(x, np.array([[-3.0, 0.0]]))[0, 0] == pytest.approx(2.0, abs=1e-7)


def test_cosine_bounds():
    rng = np.random.default_rng(0)
    C = cosine_cost(rng.normal(size=(40, 4)), rng.normal(size=(30, 4)))
    assert C.shape == (40, 30) and C.min() >= -1e-12 and C.max() <= 2 + 1e-12


def test_sinkhorn_zero_cost_uniform():
    plan = sinkhorn(np.zeros((4, 4)))
    assert np.allclose(plan.plan, 1 / 16, atol=1e-15)


def test_sinkhorn_two_by_two():
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    plan = sinkhorn(C, 0.01, 100)
    assert np.max(np.abs(plan.plan - np.diag([0.5, 0.5]))) <= 1e-6
    assert plan.cost(C) <= 1e-6


def test_sinkhorn_near_permutation_optimum():
    rng = np.random.default_rng(0)
    perms = np.array(list(itertools.permutations(range(5))))
    for _ in range(10):
        C = rng.random((5, 5))
        best = C[np.arange(5), perms].sum(axis=1).min() / 5
        assert sinkhorn(C, 1e-3, 2000).cost(C) <= 1.01 * best


@pytest.mark.parametrize("n,m", [(5, 5), (12, 20), (50, 50), (50, 17)])
def test_sinkhorn_marginals(n, m):
    rng = np.random.default_rng(n * m)
    C = cosine_cost(rng.normal(size=(n, 6)), rng.normal(size=(m, 6)))
    plan = sinkhorn(C)
    assert np.min(plan.plan) >= 0
    assert plan.marginal_violation <= 1e-6
    assert np.allclose(plan.plan.sum(axis=1), 1 / n, atol=1e-6) and np.allclose(plan.plan.sum(axis=0), 1 / m, atol=1e-6)
    assert np.isfinite(plan.sinkhorn_residual)


def test_unrounded_plan_reports_raw_residual():
    rng = np.random.default_rng(0)
    C = rng.random((6, 6))
    raw = sinkhorn(C, round_plan=False)
    assert raw.marginal_violation == raw.sinkhorn_residual


def test_sinkhorn_cost_monotone_in_epsilon():
    rng = np.random.default_rng(3)
    for _ in range(5):
        C = rng.random((8, 8))
        costs = [sinkhorn(C, eps, 2000).cost(C) for eps in (1.0, 0.1, 0.01, 0.001)]
        assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


def test_sinkhorn_rejects_bad_settings():
    with pytest.raises(ContractViolation):
        sinkhorn(np.zeros((2, 2)), epsilon=0.0)
    with pytest.raises(ContractViolation):
        sinkhorn(np.zeros((2, 2)), iters=0)


def test_ot_identical_trajectories():
    rng = np.random.default_rng(0)
    traj = rng.normal(size=(40, 8))
    r = ot_rewards(traj, traj)
    assert np.max(np.abs(r)) <= 1e-6


def test_ot_scale_linear_and_non_positive():
    rng = np.random.default_rng(1)
    a, e = rng.normal(size=(30, 4)), rng.normal(size=(30, 4))
    r1 = ot_rewards(a, e, scale=20.0)
    r2 = ot_rewards(a, e, scale=40.0)
    assert np.array_equal(2.0 * r1, r2)
    assert np.all(r1 <= 0)


def test_ot_batched_matches_single():
    rng = np.random.default_rng(2)
    a, e = rng.normal(size=(3, 25, 4)), rng.normal(size=(3, 25, 4))
    batched = ot_rewards(a, e)
    for i in range(3):
        assert np.allclose(batched[i], ot_rewards(a[i], e[i]), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 10**6))
def test_ot_rewards_always_finite(n, m, seed):
    rng = np.random.default_rng(seed)
    r = ot_rewards(rng.normal(size=(n, 3)), rng.normal(size=(m, 3)))
    assert r.shape == (n,) and np.all(np.isfinite(r)) and np.all(r <= 0)
