"""Regret scores for levels from student trajectories.

The primary score is the positive value loss: the mean clipped generalized
advantage ``(1/T) sum_t max(A_t, 0)`` with ``A_t = sum_{k>=t}
(gamma*lambda)^{k-t} delta_k`` accumulated within episode boundaries. MaxMC
(``max return observed on the level minus the trajectory return``) is wired
as an alternative but unused by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class ScoredTrajectory:
    """One worker's rollout slice on a single level.

    ``values`` has length ``steps + 1`` (bootstrap last); the bootstrap entry
    must be 0 when the final step terminated the episode. ``dones`` marks
    episode ends inside the slice (auto-reset rollouts hold several).
    """

    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    gamma: float
    gae_lambda: float

    def __post_init__(self):
        rewards = np.asarray(self.rewards, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        dones = np.asarray(self.dones, dtype=np.float64)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dones", dones)
        t = rewards.shape[0]
        if t == 0:
            raise ValueError("empty trajectory")
        if values.shape != (t + 1,):
            raise ValueError("values must have length steps + 1 (bootstrap last)")
        if dones.shape != (t,):
            raise ValueError("dones must align with rewards")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and lambda must lie in [0, 1]")
        if dones[-1] and values[-1] != 0.0:
            raise ValueError("terminal bootstrap value must be 0")

    @property
    def steps(self) -> int:
        return self.rewards.shape[0]


def td_errors(traj: ScoredTrajectory) -> np.ndarray:
    """delta_k = r_k + gamma * V(s_{k+1}) * (1 - done_k) - V(s_k)."""
    nonterminal = 1.0 - traj.dones
    return traj.rewards + traj.gamma * traj.values[1:] * nonterminal - traj.values[:-1]


def advantages(traj: ScoredTrajectory) -> np.ndarray:
    """Generalized advantages by masked backward recursion (see gae_scan)."""
    adv = kernels.gae_scan(
        traj.rewards[:, None],
        traj.values[:, None],
        traj.dones[:, None],
        traj.gamma,
        traj.gae_lambda,
    )
    return adv[:, 0]


def pvl_score(traj: ScoredTrajectory) -> float:
    """Positive value loss: mean over steps of the clipped advantage,
    ``(1/T) sum_t max(A_t, 0)``. Always >= 0; 0 when the value function is
    exact everywhere."""
    return float(np.maximum(advantages(traj), 0.0).mean())


def maxmc_score(traj: ScoredTrajectory, level_max_return: float) -> float:
    """Maximum Monte Carlo regret: ``(1/T) sum_t (R_max - return)``, with
    R_max tracked per level as the running maximum observed return. Callers
    initialize R_max to the first observed return on the level."""
    total_return = float(traj.rewards.sum())
    per_step = level_max_return - total_return
    return float(np.full(traj.steps, per_step).mean())
