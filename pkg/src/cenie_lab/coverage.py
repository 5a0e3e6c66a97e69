"""State-action coverage features, the FIFO feature window, and GMM-backed
novelty scoring.

Novelty of a batch of features X under the window model is the negative mean
log-likelihood ``-(1/|X|) sum_t log p(x_t)``: high when the trajectory visits
state-action regions the recent-training mixture assigns low density.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import gmm
from .constants import CELL_GOAL, CELL_WALL, FEAT_DIM, N_ACTIONS, N_DIRS
from .maze_env import MazeState, observe

_log = logging.getLogger(__name__)


def encode_state_action(state: MazeState, action: int) -> np.ndarray:
    """Fixed-layout feature vector for one (state, action) pair, every entry
    in [0, 1]:

    ``[x/width, y/height, orientation one-hot (4), action one-hot (3),
    wall density of the 5x5 forward view, normalized goal distance or 1]``

    Wall density counts in-bounds wall cells over a denominator of 25. The
    goal-distance entry is the Euclidean agent-goal distance over the grid
    diagonal when the goal lies inside the view window, else exactly 1.
    """
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"action {action!r} out of range")
    level = state.level
    out = np.zeros(FEAT_DIM, dtype=np.float64)
    out[0] = state.x / level.width
    out[1] = state.y / level.height
    out[2 + state.direction] = 1.0
    out[2 + N_DIRS + action] = 1.0
    obs = observe(level, state.x, state.y, state.direction)
    out[2 + N_DIRS + N_ACTIONS] = int((obs.grid == CELL_WALL).sum()) / 25.0
    if (obs.grid == CELL_GOAL).any():
        gx, gy = level.goal
        dist = math.hypot(gx - state.x, gy - state.y)
        out[2 + N_DIRS + N_ACTIONS + 1] = dist / math.hypot(level.width, level.height)
    else:
        out[2 + N_DIRS + N_ACTIONS + 1] = 1.0
    return out


class CoverageWindow:
    """FIFO of per-level feature blocks from the most recent training
    trajectories; oldest block drops when more than ``window_levels`` are
    held. Owned and mutated by one orchestrator loop."""

    def __init__(self, window_levels: int):
        if window_levels < 1:
            raise ValueError("window_levels must be >= 1")
        self.window_levels = window_levels
        self._blocks = deque()
        self.empty_pushes_dropped = 0

    def __len__(self) -> int:
        return len(self._blocks)

    @property
    def total_samples(self) -> int:
        return sum(b.shape[0] for _, b in self._blocks)

    def level_ids(self):
        return [lid for lid, _ in self._blocks]

    def as_matrix(self) -> np.ndarray:
        if not self._blocks:
            return np.zeros((0, FEAT_DIM), dtype=np.float64)
        return np.concatenate([b for _, b in self._blocks], axis=0)


def update_window(window: CoverageWindow, level_id: str, features) -> CoverageWindow:
    """Push one level's feature block; a FIFO eviction keeps at most
    ``window_levels`` blocks. An empty block is dropped with a warning."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != FEAT_DIM:
        raise ValueError(f"features must be (n, {FEAT_DIM})")
    if features.shape[0] == 0:
        window.empty_pushes_dropped += 1
        _log.warning("dropped empty feature block for level %s", level_id)
        return window
    window._blocks.append((level_id, features))
    while len(window._blocks) > window.window_levels:
        window._blocks.popleft()
    return window


@dataclass(frozen=True)
class CoverageModel:
    """A fitted window mixture plus fit provenance. ``stale`` marks a model
    carried over because a refit lacked samples."""

    params: gmm.GmmParams
    fitted_on_samples: int
    fitted_at: int
    stale: bool = False


def refit(
    window: CoverageWindow,
    k_range,
    fit_config: gmm.FitConfig,
    rng_seed: int = None,
    previous: CoverageModel = None,
    fitted_at: int = 0,
):
    """Flatten the window and select a mixture over k in ``k_range`` by
    silhouette. With too few samples the previous model is returned unchanged
    apart from a raised ``stale`` flag (``None`` stays ``None``)."""
    k_min, k_max = int(k_range[0]), int(k_range[1])
    if rng_seed is not None:
        fit_config = replace(fit_config, rng_seed=int(rng_seed))
    data = window.as_matrix()
    if data.shape[0] < max(2, k_min):
        if previous is None:
            return None
        return replace(previous, stale=True)
    report = gmm.select_model(data, k_min, k_max, fit_config)
    return CoverageModel(
        params=report.params,
        fitted_on_samples=data.shape[0],
        fitted_at=fitted_at,
        stale=False,
    )


def novelty_score(model, features) -> float:
    """Negative mean log-likelihood of the feature batch under the model.
    Accepts a CoverageModel or bare GmmParams. Empty batches and dimension
    mismatches are errors; callers treat an unfitted model (None) as
    novelty 0 upstream."""
    params = model.params if isinstance(model, CoverageModel) else model
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("features must be a non-empty (n, d) batch")
    return float(-gmm.mixture_log_densities(params, features).mean())
