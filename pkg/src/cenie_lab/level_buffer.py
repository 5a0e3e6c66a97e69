"""Prioritized level store: rank-based replay probabilities mixing novelty
and regret scores, a staleness channel, eviction-by-probability insertion,
and seeded replay sampling.

The replay distribution over buffer entries is

    P = (1 - rho) * (alpha * P_novelty + (1 - alpha) * P_regret) + rho * P_stale

where each score channel is rank-prioritized (``h = 1/rank``, ``P_i
proportional to h_i^beta``) and ``P_stale`` weights entries by episodes since
their last replay. ``alpha = 0`` with ``rho = 0`` reduces to regret-only
prioritization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maze_env import Level, level_from_json, level_to_json


class BufferError(ValueError):
    pass


@dataclass(frozen=True)
class BufferConfig:
    capacity: int = 4000
    beta: float = 0.3
    rho: float = 0.5
    alpha: float = 0.5
    replay_rate: float = 0.5

    def __post_init__(self):
        if self.capacity < 1:
            raise BufferError("capacity must be >= 1")
        if self.beta < 0:
            raise BufferError("beta must be >= 0")
        for name in ("rho", "alpha", "replay_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise BufferError(f"{name} must lie in [0, 1]")


@dataclass
class LevelBufferEntry:
    level: Level
    regret_score: float
    novelty_score: float
    inserted_episode: int
    last_replay_episode: int
    max_return: float = None  # running max, only tracked under MaxMC scoring

    def to_dict(self) -> dict:
        return {
            "level": level_to_json(self.level),
            "regret_score": self.regret_score,
            "novelty_score": self.novelty_score,
            "inserted_episode": self.inserted_episode,
            "last_replay_episode": self.last_replay_episode,
            "max_return": self.max_return,
        }

    @staticmethod
    def from_dict(d: dict) -> "LevelBufferEntry":
        return LevelBufferEntry(
            level=level_from_json(d["level"]),
            regret_score=float(d["regret_score"]),
            novelty_score=float(d["novelty_score"]),
            inserted_episode=int(d["inserted_episode"]),
            last_replay_episode=int(d["last_replay_episode"]),
            max_return=None if d.get("max_return") is None else float(d["max_return"]),
        )


def rank_prioritized_probs(scores, beta: float) -> np.ndarray:
    """Rank scores descending (rank 1 = best; ties share the smallest rank
    position of their group) and return ``(1/rank)^beta`` normalized to a
    distribution. ``beta = 0`` is uniform."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise BufferError("scores must be a non-empty vector")
    if np.isnan(scores).any():
        raise BufferError("scores contain NaN")
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    first_pos = {}
    for pos, idx in enumerate(order):
        s = scores[idx]
        if s not in first_pos:
            first_pos[s] = pos + 1
        ranks[idx] = first_pos[s]
    h = (1.0 / ranks) ** beta
    return h / h.sum()


def combined_replay_probs(entries, config: BufferConfig, current_episode: int) -> np.ndarray:
    """Mix the novelty and regret rank channels by ``alpha``, then blend in
    the staleness channel by ``rho``. Staleness is uniform when nothing has
    aged."""
    if not entries:
        raise BufferError("empty buffer")
    n = len(entries)
    if n == 1:
        return np.ones(1, dtype=np.float64)
    novelty = rank_prioritized_probs([e.novelty_score for e in entries], config.beta)
    regret = rank_prioritized_probs([e.regret_score for e in entries], config.beta)
    p_scores = config.alpha * novelty + (1.0 - config.alpha) * regret
    staleness = np.array(
        [max(0, current_episode - e.last_replay_episode) for e in entries],
        dtype=np.float64,
    )
    total = staleness.sum()
    p_stale = staleness / total if total > 0 else np.full(n, 1.0 / n)
    return (1.0 - config.rho) * p_scores + config.rho * p_stale


def insert_if_better(entries: list, candidate: LevelBufferEntry, config: BufferConfig,
                     current_episode: int) -> bool:
    """Below capacity: always insert. At capacity: compute replay
    probabilities over buffer plus candidate; if the candidate's probability
    strictly exceeds the buffer minimum, evict the argmin (ties break to the
    oldest inserted, then lowest index) and insert. Returns True on insert."""
    if len(entries) < config.capacity:
        entries.append(candidate)
        return True
    probs = combined_replay_probs(entries + [candidate], config, current_episode)
    cand_p = probs[-1]
    buffer_probs = probs[:-1]
    min_p = buffer_probs.min()
    if not cand_p > min_p:
        return False
    min_idx = [i for i, p in enumerate(buffer_probs) if p == min_p]
    evict = min(min_idx, key=lambda i: (entries[i].inserted_episode, i))
    del entries[evict]
    entries.append(candidate)
    return True


def sample_replay(entries: list, config: BufferConfig, current_episode: int, rng) -> LevelBufferEntry:
    """Draw one entry by inverse CDF over the combined probabilities and
    stamp its ``last_replay_episode``."""
    probs = combined_replay_probs(entries, config, current_episode)
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    idx = min(idx, len(entries) - 1)
    entry = entries[idx]
    entry.last_replay_episode = current_episode
    return entry


def buffer_to_dict(entries) -> dict:
    return {"entries": [e.to_dict() for e in entries]}


def buffer_from_dict(d: dict) -> list:
    return [LevelBufferEntry.from_dict(e) for e in d["entries"]]
