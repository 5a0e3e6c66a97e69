"""Partially observable maze levels: generation, mutation, stepping, search.

A level is a static grid of wall cells plus an agent start pose and a goal
cell. The agent sees a 5x5 window strictly in front of itself and acts with
{forward, turn-left, turn-right}. Reaching the goal ends the episode with
reward ``1 - steps/h_max``; running out of steps ends it with reward 0.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .constants import (
    ACTION_FORWARD,
    ACTION_LEFT,
    ACTION_RIGHT,
    CELL_EMPTY,
    CELL_GOAL,
    CELL_OOB,
    CELL_WALL,
    DIR_EAST,
    DX,
    DY,
    N_CELL_CODES,
    N_DIRS,
    OBS_DIM,
    VIEW_FORWARD,
    VIEW_LATERAL,
)

DEFAULT_H_MAX = 100

_AGENT_CHARS = "^>v<"


class LevelError(ValueError):
    """Invalid level content or an impossible generation request."""


@dataclass(frozen=True)
class Level:
    """Immutable maze layout. Identity is the content hash ``level_id``.

    ``name`` is a display label (held-out suite levels carry one); it is
    serialized but excluded from the identity hash.
    """

    width: int
    height: int
    walls: frozenset
    agent: tuple  # (x, y, dir)
    goal: tuple  # (x, y)
    name: str = ""

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise LevelError("grid must be at least 2x2")
        ax, ay, ad = self.agent
        gx, gy = self.goal
        if not (0 <= ax < self.width and 0 <= ay < self.height):
            raise LevelError("agent start out of bounds")
        if not (0 <= gx < self.width and 0 <= gy < self.height):
            raise LevelError("goal out of bounds")
        if not 0 <= ad < N_DIRS:
            raise LevelError(f"agent orientation must be in [0, {N_DIRS})")
        if (ax, ay) == (gx, gy):
            raise LevelError("agent start and goal must differ")
        for (x, y) in self.walls:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise LevelError(f"wall cell {(x, y)} out of bounds")
        if (ax, ay) in self.walls:
            raise LevelError("agent start sits on a wall")
        if (gx, gy) in self.walls:
            raise LevelError("goal sits on a wall")

    @property
    def level_id(self) -> str:
        payload = json.dumps(_canonical_dict(self, with_name=False), separators=(",", ":"))
        return hashlib.sha1(payload.encode()).hexdigest()

    def free_cells(self):
        """All non-wall cells in row-major order."""
        return [
            (x, y)
            for y in range(self.height)
            for x in range(self.width)
            if (x, y) not in self.walls
        ]


@dataclass(frozen=True)
class MazeState:
    """Single-episode progress on a level. ``h_max`` is the step limit."""

    level: Level
    x: int
    y: int
    direction: int
    steps_taken: int
    done: bool
    h_max: int


@dataclass(frozen=True)
class Observation:
    """Egocentric 5x5 forward view plus the agent's orientation.

    ``grid[r, c]`` holds the cell code (EMPTY/WALL/GOAL/OOB) at forward
    distance ``r + 1`` and lateral offset ``c - 2`` (negative = left of the
    facing direction). Cells behind the agent are never included.
    """

    grid: np.ndarray
    direction: int


def _canonical_dict(level: Level, with_name: bool = True) -> dict:
    d = {
        "width": level.width,
        "height": level.height,
        "walls": sorted([list(w) for w in level.walls]),
        "agent": [level.agent[0], level.agent[1], level.agent[2]],
        "goal": [level.goal[0], level.goal[1]],
    }
    if with_name:
        d["name"] = level.name
    return d


def level_to_json(level: Level) -> str:
    return json.dumps(_canonical_dict(level), separators=(",", ":"))


def level_from_json(text: str) -> Level:
    d = json.loads(text)
    unknown = set(d) - {"width", "height", "walls", "agent", "goal", "name"}
    if unknown:
        raise LevelError(f"unknown level keys: {sorted(unknown)}")
    return Level(
        width=int(d["width"]),
        height=int(d["height"]),
        walls=frozenset((int(x), int(y)) for x, y in d["walls"]),
        agent=(int(d["agent"][0]), int(d["agent"][1]), int(d["agent"][2])),
        goal=(int(d["goal"][0]), int(d["goal"][1])),
        name=str(d.get("name", "")),
    )


def level_to_arrays(level: Level):
    """Kernel-facing view: (walls uint8 (h, w), sx, sy, sdir, gx, gy)."""
    walls = np.zeros((level.height, level.width), dtype=np.uint8)
    for (x, y) in level.walls:
        walls[y, x] = 1
    ax, ay, ad = level.agent
    return walls, ax, ay, ad, level.goal[0], level.goal[1]


def generate_random_level(grid_size: int, wall_count_range, rng, name: str = "") -> Level:
    """Domain-randomized level: uniform wall count, uniform cell placement.

    Solvability is deliberately NOT enforced; unsolvable levels are valid
    curriculum candidates and score low regret on their own.
    """
    lo, hi = int(wall_count_range[0]), int(wall_count_range[1])
    n_cells = grid_size * grid_size
    if lo < 0 or lo > hi:
        raise LevelError(f"bad wall count range ({lo}, {hi})")
    if hi > n_cells - 2:
        raise LevelError(
            f"wall count range ({lo}, {hi}) leaves no room for agent and goal "
            f"on a {grid_size}x{grid_size} grid"
        )
    n_walls = int(rng.integers(lo, hi + 1))
    wall_idx = rng.choice(n_cells, size=n_walls, replace=False)
    wall_set = frozenset((int(i) % grid_size, int(i) // grid_size) for i in wall_idx)
    free = [
        (x, y)
        for y in range(grid_size)
        for x in range(grid_size)
        if (x, y) not in wall_set
    ]
    agent_cell = free[int(rng.integers(len(free)))]
    rest = [c for c in free if c != agent_cell]
    goal_cell = rest[int(rng.integers(len(rest)))]
    direction = int(rng.integers(N_DIRS))
    return Level(
        width=grid_size,
        height=grid_size,
        walls=wall_set,
        agent=(agent_cell[0], agent_cell[1], direction),
        goal=goal_cell,
        name=name,
    )


def edit_level(level: Level, num_edits: int, rng) -> Level:
    """Apply ``num_edits`` uniform random primitives: wall toggle, goal move,
    agent-start move. Validity is preserved by construction; the result can
    coincide with the input (a goal move may pick the current goal cell).
    """
    cur = level
    for _ in range(num_edits):
        op = int(rng.integers(3))
        agent_cell = (cur.agent[0], cur.agent[1])
        if op == 0:
            candidates = [
                (x, y)
                for y in range(cur.height)
                for x in range(cur.width)
                if (x, y) != agent_cell and (x, y) != cur.goal
            ]
            cell = candidates[int(rng.integers(len(candidates)))]
            walls = set(cur.walls)
            if cell in walls:
                walls.discard(cell)
            else:
                walls.add(cell)
            cur = replace(cur, walls=frozenset(walls), name="")
        elif op == 1:
            candidates = [c for c in cur.free_cells() if c != agent_cell]
            cell = candidates[int(rng.integers(len(candidates)))]
            cur = replace(cur, goal=cell, name="")
        else:
            candidates = [c for c in cur.free_cells() if c != cur.goal]
            cell = candidates[int(rng.integers(len(candidates)))]
            cur = replace(cur, agent=(cell[0], cell[1], cur.agent[2]), name="")
    return cur


def observe(level: Level, x: int, y: int, direction: int) -> Observation:
    span = 2 * VIEW_LATERAL + 1
    grid = np.empty((VIEW_FORWARD, span), dtype=np.int8)
    fx, fy = DX[direction], DY[direction]
    rd = (direction + 1) % N_DIRS
    rx, ry = DX[rd], DY[rd]
    gx, gy = level.goal
    for f in range(1, VIEW_FORWARD + 1):
        for l in range(-VIEW_LATERAL, VIEW_LATERAL + 1):
            cx = x + f * fx + l * rx
            cy = y + f * fy + l * ry
            if not (0 <= cx < level.width and 0 <= cy < level.height):
                code = CELL_OOB
            elif (cx, cy) in level.walls:
                code = CELL_WALL
            elif (cx, cy) == (gx, gy):
                code = CELL_GOAL
            else:
                code = CELL_EMPTY
            grid[f - 1, l + VIEW_LATERAL] = code
    return Observation(grid=grid, direction=direction)


def observation_to_policy_input(obs: Observation) -> np.ndarray:
    """Flatten to the 104-entry policy input: per-cell code one-hots in
    row-major view order, then the orientation one-hot."""
    out = np.zeros(OBS_DIM, dtype=np.float64)
    flat = obs.grid.ravel()
    for cell, code in enumerate(flat):
        out[cell * N_CELL_CODES + int(code)] = 1.0
    out[flat.size * N_CELL_CODES + obs.direction] = 1.0
    return out


def reset_and_observe(level: Level, h_max: int = DEFAULT_H_MAX):
    if h_max < 1:
        raise ValueError("h_max must be positive")
    ax, ay, ad = level.agent
    state = MazeState(
        level=level, x=ax, y=ay, direction=ad, steps_taken=0, done=False, h_max=h_max
    )
    return state, observe(level, ax, ay, ad)


def step(state: MazeState, action: int):
    """One transition. Returns (new_state, observation, reward, done).

    Forward into a wall or the boundary leaves the pose unchanged but still
    consumes a step. Reaching the goal yields ``1 - steps/h_max``; exhausting
    ``h_max`` steps yields 0.
    """
    if state.done:
        raise RuntimeError("step() on a finished episode")
    if action not in (ACTION_FORWARD, ACTION_LEFT, ACTION_RIGHT):
        raise ValueError(f"unknown action {action!r}")
    level = state.level
    x, y, d = state.x, state.y, state.direction
    if action == ACTION_FORWARD:
        nx, ny = x + DX[d], y + DY[d]
        if 0 <= nx < level.width and 0 <= ny < level.height and (nx, ny) not in level.walls:
            x, y = nx, ny
    elif action == ACTION_LEFT:
        d = (d + 3) % N_DIRS
    else:
        d = (d + 1) % N_DIRS
    steps = state.steps_taken + 1
    reward = 0.0
    done = False
    if (x, y) == level.goal:
        done = True
        reward = 1.0 - steps / state.h_max
    elif steps >= state.h_max:
        done = True
    new_state = MazeState(
        level=level, x=x, y=y, direction=d, steps_taken=steps, done=done, h_max=state.h_max
    )
    return new_state, observe(level, x, y, d), reward, done


def shortest_path_length(level: Level):
    """Minimum number of actions (turns count) from the start pose to the
    goal cell, by breadth-first search over (x, y, orientation). Returns
    ``None`` when the goal is unreachable.
    """
    ax, ay, ad = level.agent
    gx, gy = level.goal
    seen = {(ax, ay, ad)}
    queue = deque([(ax, ay, ad, 0)])
    while queue:
        x, y, d, dist = queue.popleft()
        nxt = []
        fx, fy = x + DX[d], y + DY[d]
        if 0 <= fx < level.width and 0 <= fy < level.height and (fx, fy) not in level.walls:
            nxt.append((fx, fy, d))
        nxt.append((x, y, (d + 3) % N_DIRS))
        nxt.append((x, y, (d + 1) % N_DIRS))
        for (nx, ny, nd) in nxt:
            if (nx, ny) == (gx, gy):
                return dist + 1
            if (nx, ny, nd) not in seen:
                seen.add((nx, ny, nd))
                queue.append((nx, ny, nd, dist + 1))
    return None


def reachable_cells(level: Level):
    """Cells the agent can occupy, via flood fill from the start cell."""
    ax, ay, _ = level.agent
    seen = {(ax, ay)}
    queue = deque([(ax, ay)])
    while queue:
        x, y = queue.popleft()
        for d in range(N_DIRS):
            nx, ny = x + DX[d], y + DY[d]
            if (
                0 <= nx < level.width
                and 0 <= ny < level.height
                and (nx, ny) not in level.walls
                and (nx, ny) not in seen
            ):
                seen.add((nx, ny))
                queue.append((nx, ny))
    return seen


def render_ascii(level: Level, state: MazeState = None) -> str:
    """'#' wall, '.' empty, 'G' goal, agent '^>v<' (occludes the goal)."""
    if state is None:
        ax, ay, ad = level.agent
    else:
        ax, ay, ad = state.x, state.y, state.direction
    rows = []
    for y in range(level.height):
        row = []
        for x in range(level.width):
            if (x, y) == (ax, ay):
                row.append(_AGENT_CHARS[ad])
            elif (x, y) == level.goal:
                row.append("G")
            elif (x, y) in level.walls:
                row.append("#")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows)


def _ring(lo: int, hi: int):
    """Border cells of the square [lo, hi]^2."""
    cells = set()
    for v in range(lo, hi + 1):
        cells.update({(v, lo), (v, hi), (lo, v), (hi, v)})
    return cells


def held_out_suite(grid_size: int):
    """Six fixed evaluation levels, all solvable. ``grid_size`` must be odd
    and at least 9 so the layouts have room."""
    if grid_size < 9 or grid_size % 2 == 0:
        raise LevelError("held-out suite needs an odd grid size >= 9")
    s = grid_size
    mid = s // 2
    corner = (s - 2, s - 2)
    levels = []

    levels.append(
        Level(s, s, frozenset(), (1, 1, DIR_EAST), corner, name="EmptyRoom")
    )

    gaps = {mid // 2, mid + (s - mid) // 2}
    walls = set()
    for v in range(s):
        if v not in gaps:
            walls.add((mid, v))
            walls.add((v, mid))
    levels.append(
        Level(s, s, frozenset(walls), (1, 1, DIR_EAST), corner, name="FourRooms")
    )

    walls = set()
    for y in range(s):
        if y != 1:
            walls.add((mid, y))
    for x in range(s):
        if x != s - 2 and x != mid:
            walls.add((x, mid))
    levels.append(
        Level(s, s, frozenset(walls), (1, 1, DIR_EAST), corner, name="SimpleCrossing")
    )

    walls = set()
    offset = 2
    k = 0
    while offset < mid - 1:
        ring = _ring(offset, s - 1 - offset)
        gap = (mid, offset) if k % 2 == 0 else (mid, s - 1 - offset)
        ring.discard(gap)
        walls.update(ring)
        offset += 2
        k += 1
    levels.append(
        Level(s, s, frozenset(walls), (1, 1, DIR_EAST), (mid, mid), name="LabyrinthMini")
    )

    dividers = [s // 3, 2 * s // 3]
    spans = []
    prev = 0
    for d in dividers + [s]:
        spans.append((prev, d - 1))
        prev = d + 1
    span_mids = {(a + b) // 2 for a, b in spans}
    walls = set()
    for d in dividers:
        for v in range(s):
            if v not in span_mids:
                walls.add((d, v))
                walls.add((v, d))
    levels.append(
        Level(s, s, frozenset(walls), (1, 1, DIR_EAST), corner, name="SixteenRoomsMini")
    )

    walls = set()
    offset = 1
    k = 0
    while offset <= mid - 1:
        ring = _ring(offset, s - 1 - offset)
        side = k % 4
        if side == 0:
            gap = (mid, offset)
        elif side == 1:
            gap = (s - 1 - offset, mid)
        elif side == 2:
            gap = (mid, s - 1 - offset)
        else:
            gap = (offset, mid)
        ring.discard(gap)
        walls.update(ring)
        offset += 2
        k += 1
    levels.append(
        Level(s, s, frozenset(walls), (0, 0, DIR_EAST), (mid, mid), name="MazeSpiral")
    )
    return levels


SUITE_NAMES = [
    "EmptyRoom",
    "FourRooms",
    "SimpleCrossing",
    "LabyrinthMini",
    "SixteenRoomsMini",
    "MazeSpiral",
]
