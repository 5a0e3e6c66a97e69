"""Grid-world geometry and encoding constants shared by the env, the kernels
and the feature encoder.  Kernels compile against these values, so changing
any of them invalidates compiled caches and stored checkpoints.
"""

# Orientations, clockwise. "North" points toward decreasing y (row 0 is drawn
# on top by the ASCII renderer).
DIR_NORTH, DIR_EAST, DIR_SOUTH, DIR_WEST = 0, 1, 2, 3
N_DIRS = 4
DX = (0, 1, 0, -1)
DY = (-1, 0, 1, 0)

ACTION_FORWARD, ACTION_LEFT, ACTION_RIGHT = 0, 1, 2
N_ACTIONS = 3

# Egocentric 5x5 window strictly in front of the agent: forward distance
# 1..5, lateral offset -2..+2 relative to the facing direction. Cells behind
# the agent (and the agent's own cell) are never observed.
VIEW_FORWARD = 5
VIEW_LATERAL = 2
VIEW_CELLS = VIEW_FORWARD * (2 * VIEW_LATERAL + 1)

# Per-cell observation codes.
CELL_EMPTY, CELL_WALL, CELL_GOAL, CELL_OOB = 0, 1, 2, 3
N_CELL_CODES = 4

# Flattened policy input: one-hot code per view cell plus orientation one-hot.
OBS_DIM = VIEW_CELLS * N_CELL_CODES + N_DIRS  # 104

# State-action coverage feature:
#   [x/width, y/height, orientation one-hot (4), action one-hot (3),
#    wall density of the view window, normalized goal distance or 1]
FEAT_DIM = 2 + N_DIRS + N_ACTIONS + 2  # 11
