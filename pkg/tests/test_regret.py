"""Regret scoring against brute-force nested-loop oracles."""

import numpy as np
import pytest

from cenie_lab.regret import ScoredTrajectory, advantages, maxmc_score, pvl_score, td_errors


def gae_oracle(rewards, values, dones, gamma, lam):
    """O(T^2) definition: A_t accumulates (gamma*lam)^{k-t} delta_k forward
    from t, stopping after the first episode end at or beyond t."""
    t_total = len(rewards)
    adv = np.zeros(t_total)
    for t in range(t_total):
        total, coef = 0.0, 1.0
        for k in range(t, t_total):
            delta = rewards[k] + gamma * values[k + 1] * (1.0 - dones[k]) - values[k]
            total += coef * delta
            if dones[k]:
                break
            coef *= gamma * lam
        adv[t] = total
    return adv


def pvl_oracle(rewards, values, dones, gamma, lam):
    adv = gae_oracle(rewards, values, dones, gamma, lam)
    return np.maximum(adv, 0.0).mean()


def random_trajectory(rng):
    t = int(rng.integers(1, 31))
    rewards = rng.normal(size=t)
    values = rng.normal(size=t + 1)
    dones = (rng.random(t) < 0.2).astype(np.float64)
    if rng.random() < 0.5:
        dones[-1] = 1.0
    if dones[-1]:
        values[-1] = 0.0
    grid = np.array([0.0, 0.5, 0.9, 1.0])
    gamma = float(rng.choice(grid))
    lam = float(rng.choice(grid))
    return ScoredTrajectory(rewards, values, dones, gamma, lam)


def test_advantages_match_nested_loop_oracle():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(500):
        traj = random_trajectory(rng)
        got = advantages(traj)
        want = gae_oracle(traj.rewards, traj.values, traj.dones, traj.gamma, traj.gae_lambda)
        worst = max(worst, np.abs(got - want).max())
    assert worst < 1e-10


def test_pvl_matches_nested_loop_oracle():
    rng = np.random.default_rng(43)
    worst = 0.0
    for _ in range(500):
        traj = random_trajectory(rng)
        got = pvl_score(traj)
        want = pvl_oracle(traj.rewards, traj.values, traj.dones, traj.gamma, traj.gae_lambda)
        worst = max(worst, abs(got - want))
    assert worst < 1e-10


def test_pvl_nonnegative():
    rng = np.random.default_rng(44)
    for _ in range(100):
        assert pvl_score(random_trajectory(rng)) >= 0.0


def test_lambda_zero_reduces_to_td_errors():
    rng = np.random.default_rng(45)
    for _ in range(50):
        t = int(rng.integers(1, 20))
        rewards = rng.normal(size=t)
        values = rng.normal(size=t + 1)
        dones = (rng.random(t) < 0.3).astype(np.float64)
        if dones[-1]:
            values[-1] = 0.0
        traj = ScoredTrajectory(rewards, values, dones, 0.9, 0.0)
        np.testing.assert_allclose(advantages(traj), td_errors(traj), atol=1e-12)


def test_perfect_value_function_gives_zero_pvl():
    # Deterministic MRP: values computed exactly by backward induction make
    # every delta zero, hence PVL exactly zero.
    rng = np.random.default_rng(46)
    gamma = 0.9
    for _ in range(20):
        t = int(rng.integers(2, 15))
        rewards = rng.normal(size=t)
        dones = np.zeros(t)
        dones[-1] = 1.0
        values = np.zeros(t + 1)
        for k in range(t - 1, -1, -1):
            values[k] = rewards[k] + gamma * values[k + 1] * (1.0 - dones[k])
        traj = ScoredTrajectory(rewards, values, dones, gamma, 0.95)
        assert pvl_score(traj) == 0.0


def test_positive_scale_equivariance():
    rng = np.random.default_rng(47)
    traj = random_trajectory(rng)
    c = 3.7
    scaled = ScoredTrajectory(
        traj.rewards * c, traj.values * c, traj.dones, traj.gamma, traj.gae_lambda
    )
    np.testing.assert_allclose(pvl_score(scaled), c * pvl_score(traj), rtol=1e-12)


def test_mask_stops_credit_at_episode_boundary():
    # Two one-step episodes: the advantage at t=0 must ignore everything at t=1.
    rewards = np.array([1.0, 5.0])
    values = np.array([0.5, 0.25, 0.0])
    dones = np.array([1.0, 1.0])
    traj = ScoredTrajectory(rewards, values, dones, 0.99, 0.95)
    adv = advantages(traj)
    assert adv[0] == pytest.approx(1.0 - 0.5, abs=1e-12)
    assert adv[1] == pytest.approx(5.0 - 0.25, abs=1e-12)


def test_terminal_bootstrap_must_be_zero():
    with pytest.raises(ValueError):
        ScoredTrajectory(
            np.array([1.0]), np.array([0.0, 0.3]), np.array([1.0]), 0.99, 0.95
        )


def test_maxmc_constant_per_step():
    rewards = np.array([0.0, 0.0, 0.8])
    values = np.zeros(4)
    dones = np.array([0.0, 0.0, 1.0])
    traj = ScoredTrajectory(rewards, values, dones, 0.995, 0.95)
    assert maxmc_score(traj, 1.0) == pytest.approx(0.2, abs=1e-12)
    assert maxmc_score(traj, 0.8) == pytest.approx(0.0, abs=1e-12)
