"""Desk-scale unsupervised environment design lab.

Maze curricula for a small PPO student, driven by replay scores that mix
positive-value-loss regret with a coverage-novelty signal estimated by
Gaussian mixture models over state-action features.
"""

__version__ = "0.1.0"
