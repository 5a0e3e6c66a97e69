"""Evaluation primitives: held-out solved rates, interquartile mean,
optimality gap, state-action coverage fractions, and a small static SVG
bar-chart writer for cross-algorithm comparisons.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .constants import N_ACTIONS, N_DIRS
from .maze_env import reachable_cells
from .student import PolicyParams, PpoConfig, collect_rollout
from .util import fmt_float

SOLVED_TARGET = 0.95


@dataclass(frozen=True)
class EvalRecord:
    level_name: str
    level_id: str
    episodes: int
    solved_rate: float
    mean_return: float


def solved_rate(params: PolicyParams, levels, episodes_per_level: int, rng,
                h_max: int, deterministic: bool = False):
    """Roll out ``episodes_per_level`` independent episodes per level with the
    stochastic policy (argmax when ``deterministic``) and report the fraction
    that reached the goal plus the mean episode return."""
    if episodes_per_level < 1:
        raise ValueError("episodes_per_level must be >= 1")
    cfg = PpoConfig()
    records = []
    for level in levels:
        batch = collect_rollout(
            params, level, cfg, rng, h_max,
            steps=h_max, workers=episodes_per_level,
            auto_reset=False, deterministic=deterministic,
        )
        done = int(batch.ep_count.sum())
        if done != episodes_per_level:
            raise RuntimeError("evaluation episode failed to terminate")
        records.append(
            EvalRecord(
                level_name=level.name or level.level_id[:8],
                level_id=level.level_id,
                episodes=episodes_per_level,
                solved_rate=float(batch.ep_solved.sum() / done),
                mean_return=float(batch.ep_return_sum.sum() / done),
            )
        )
    return records


def iqm(scores) -> float:
    """Interquartile mean: drop floor(n/4) scores from each tail after
    sorting, average the middle. Fewer than 4 scores fall back to the plain
    mean with a warning."""
    scores = np.sort(np.asarray(scores, dtype=np.float64))
    n = scores.size
    if n == 0:
        raise ValueError("iqm of an empty score list")
    if n < 4:
        warnings.warn("iqm on fewer than 4 scores falls back to the plain mean")
        return float(scores.mean())
    cut = n // 4
    return float(scores[cut:n - cut].mean())


def optimality_gap(scores, target: float = SOLVED_TARGET) -> float:
    """Mean shortfall below the target score: mean(max(0, target - s))."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("optimality_gap of an empty score list")
    return float(np.maximum(0.0, target - scores).mean())


def encode_tuples(poses: np.ndarray, actions: np.ndarray, width: int) -> np.ndarray:
    """Pack (x, y, orientation) poses and actions into unique integer codes
    for set-based coverage counting."""
    poses = poses.reshape(-1, 3)
    acts = actions.reshape(-1)
    keep = acts >= 0  # frozen eval workers mark skipped steps with -1
    poses, acts = poses[keep], acts[keep]
    cell = poses[:, 1] * width + poses[:, 0]
    return (cell * N_DIRS + poses[:, 2]) * N_ACTIONS + acts


def full_grid_universe(width: int, height: int) -> int:
    return width * height * N_DIRS * N_ACTIONS


def level_set_universe(levels) -> int:
    """Tuple universe over a fixed level set: the union of agent-reachable
    cells across the levels, times orientations, times actions."""
    cells = set()
    for level in levels:
        cells.update(reachable_cells(level))
    return len(cells) * N_DIRS * N_ACTIONS


def coverage_fraction(visited_codes, universe_size: int) -> float:
    """Distinct visited (cell, orientation, action) tuples over the universe
    size. Monotone under union; 1.0 means every tuple was visited."""
    if universe_size < 1:
        raise ValueError("empty tuple universe")
    n = len(visited_codes)
    if n > universe_size:
        raise ValueError("more distinct tuples than the universe allows")
    return n / universe_size


def svg_bar_chart(path: str, title: str, categories, series: dict) -> str:
    """Static grouped bar chart (one group per category, one bar per series
    entry). Deterministic bytes for identical inputs. Returns the SVG text
    and writes it to ``path`` when given."""
    from .util import atomic_write_text

    cats = list(categories)
    names = list(series.keys())
    if not cats or not names:
        raise ValueError("chart needs at least one category and one series")
    for name in names:
        if len(series[name]) != len(cats):
            raise ValueError(f"series {name!r} length mismatch")
    width, height = 640, 360
    margin_l, margin_b, margin_t = 60, 70, 40
    plot_w, plot_h = width - margin_l - 20, height - margin_t - margin_b
    vmax = max(0.0, *(float(v) for name in names for v in series[name]))
    vmax = vmax if vmax > 0 else 1.0
    palette = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"]

    group_w = plot_w / len(cats)
    bar_w = group_w * 0.8 / len(names)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="16" '
        f'font-family="sans-serif">{title}</text>',
        f'<line x1="{margin_l}" y1="{margin_t + plot_h}" x2="{margin_l + plot_w}" '
        f'y2="{margin_t + plot_h}" stroke="black"/>',
    ]
    for tick in range(5):
        v = vmax * tick / 4
        y = margin_t + plot_h - plot_h * tick / 4
        parts.append(
            f'<text x="{margin_l - 6}" y="{y + 4}" text-anchor="end" font-size="10" '
            f'font-family="sans-serif">{v:.2f}</text>'
        )
        parts.append(
            f'<line x1="{margin_l}" y1="{y}" x2="{margin_l + plot_w}" y2="{y}" '
            f'stroke="#dddddd"/>'
        )
    for ci, cat in enumerate(cats):
        gx = margin_l + ci * group_w + group_w * 0.1
        for si, name in enumerate(names):
            v = float(series[name][ci])
            bh = plot_h * v / vmax
            x = gx + si * bar_w
            y = margin_t + plot_h - bh
            color = palette[si % len(palette)]
            parts.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" '
                f'height="{bh:.2f}" fill="{color}"><title>{name} {cat}: '
                f'{fmt_float(v)}</title></rect>'
            )
        parts.append(
            f'<text x="{margin_l + ci * group_w + group_w / 2:.2f}" '
            f'y="{margin_t + plot_h + 16}" text-anchor="middle" font-size="11" '
            f'font-family="sans-serif">{cat}</text>'
        )
    for si, name in enumerate(names):
        x = margin_l + si * 130
        y = height - 20
        color = palette[si % len(palette)]
        parts.append(f'<rect x="{x}" y="{y - 10}" width="12" height="12" fill="{color}"/>')
        parts.append(
            f'<text x="{x + 16}" y="{y}" font-size="11" font-family="sans-serif">'
            f'{name}</text>'
        )
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if path:
        atomic_write_text(path, text)
    return text
