"""Pure-numpy kernel implementations.

Reference semantics for the numba twins in ``_numba_impl``: same math, same
argument contracts, results agreeing to floating-point noise. The rollout
kernel steps all workers of one level in lockstep.
"""

import numpy as np

from ..constants import (
    ACTION_FORWARD,
    CELL_EMPTY,
    CELL_GOAL,
    CELL_OOB,
    CELL_WALL,
    DX,
    DY,
    FEAT_DIM,
    N_ACTIONS,
    N_CELL_CODES,
    N_DIRS,
    OBS_DIM,
    VIEW_FORWARD,
    VIEW_LATERAL,
)

_DX = np.asarray(DX, dtype=np.int64)
_DY = np.asarray(DY, dtype=np.int64)


def component_log_densities(x, means, prec_chol, log_det_chol):
    """Per-component Gaussian log densities.

    Parameters
    ----------
    x : (n, d) float64
    means : (k, d) float64
    prec_chol : (k, d, d) float64
        Lower-triangular inverses of the covariance Cholesky factors.
    log_det_chol : (k,) float64
        log |det prec_chol[j]| for each component.

    Returns
    -------
    (n, k) float64 with entry [i, j] = log N(x_i | mean_j, cov_j).
    """
    n, d = x.shape
    k = means.shape[0]
    out = np.empty((n, k), dtype=np.float64)
    const = -0.5 * d * np.log(2.0 * np.pi)
    for j in range(k):
        y = (x - means[j]) @ prec_chol[j].T
        out[:, j] = const + log_det_chol[j] - 0.5 * np.einsum("ij,ij->i", y, y)
    return out


def silhouette_samples(x, labels, n_clusters):
    """Per-sample silhouette values with exact O(n^2) Euclidean distances.

    Samples in singleton clusters contribute 0. Samples whose a and b are
    both exactly 0 contribute 0.
    """
    n = x.shape[0]
    counts = np.bincount(labels, minlength=n_clusters).astype(np.float64)
    out = np.zeros(n, dtype=np.float64)
    dsum = np.empty((n, n_clusters), dtype=np.float64)
    onehot = np.zeros((n, n_clusters), dtype=np.float64)
    onehot[np.arange(n), labels] = 1.0
    for i in range(n):
        diff = x - x[i]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        dsum[i] = dist @ onehot
    for i in range(n):
        own = labels[i]
        if counts[own] <= 1.0:
            continue
        a = dsum[i, own] / (counts[own] - 1.0)
        b = np.inf
        for j in range(n_clusters):
            if j == own or counts[j] == 0.0:
                continue
            b = min(b, dsum[i, j] / counts[j])
        denom = max(a, b)
        if denom > 0.0:
            out[i] = (b - a) / denom
    return out


def gae_scan(rewards, values, dones, gamma, lam):
    """Masked generalized-advantage backward recursion.

    rewards (t, w), values (t+1, w), dones (t, w). Returns advantages (t, w).
    """
    t_len, w = rewards.shape
    adv = np.zeros((t_len, w), dtype=np.float64)
    lastgaelam = np.zeros(w, dtype=np.float64)
    for t in range(t_len - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        lastgaelam = delta + gamma * lam * nonterminal * lastgaelam
        adv[t] = lastgaelam
    return adv


def _observe(walls, x, y, d, gx, gy, obs_row, feat_row):
    """Fill one worker's observation and the state part of its feature row."""
    h, w = walls.shape
    fx, fy = _DX[d], _DY[d]
    rd = (d + 1) % N_DIRS
    rx, ry = _DX[rd], _DY[rd]
    wall_cells = 0
    for f in range(1, VIEW_FORWARD + 1):
        for l in range(-VIEW_LATERAL, VIEW_LATERAL + 1):
            cx = x + f * fx + l * rx
            cy = y + f * fy + l * ry
            if cx < 0 or cx >= w or cy < 0 or cy >= h:
                code = CELL_OOB
            elif walls[cy, cx]:
                code = CELL_WALL
                wall_cells += 1
            elif cx == gx and cy == gy:
                code = CELL_GOAL
            else:
                code = CELL_EMPTY
            cell = (f - 1) * (2 * VIEW_LATERAL + 1) + (l + VIEW_LATERAL)
            obs_row[cell * N_CELL_CODES + code] = 1.0
    obs_row[VIEW_FORWARD * (2 * VIEW_LATERAL + 1) * N_CELL_CODES + d] = 1.0

    feat_row[0] = x / w
    feat_row[1] = y / h
    feat_row[2 + d] = 1.0
    feat_row[2 + N_DIRS + N_ACTIONS] = wall_cells / 25.0
    gf = (gx - x) * fx + (gy - y) * fy
    gl = (gx - x) * rx + (gy - y) * ry
    if 1 <= gf <= VIEW_FORWARD and -VIEW_LATERAL <= gl <= VIEW_LATERAL:
        dist = np.sqrt(float((gx - x) ** 2 + (gy - y) ** 2))
        feat_row[2 + N_DIRS + N_ACTIONS + 1] = dist / np.sqrt(float(w * w + h * h))
    else:
        feat_row[2 + N_DIRS + N_ACTIONS + 1] = 1.0


def _forward(obs, w1, b1, w2, b2, wp, bp, wv, bv):
    h1 = np.tanh(obs @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    logits = h2 @ wp + bp
    value = h2 @ wv + bv
    return logits, value


def rollout_batch(
    walls,
    start_x,
    start_y,
    start_dir,
    goal_x,
    goal_y,
    h_max,
    steps,
    w1,
    b1,
    w2,
    b2,
    wp,
    bp,
    wv,
    bv,
    uniforms,
    auto_reset,
    deterministic,
):
    """Step ``w`` lockstep workers on one level for ``steps`` timesteps.

    With ``auto_reset`` a finished episode restarts the level; otherwise the
    worker freezes (zero rows, done stays raised) once its episode ends.
    Returns the arrays documented in the package kernels docstring.
    """
    n_workers = uniforms.shape[1]
    grid_h, grid_w = walls.shape

    obs = np.zeros((steps, n_workers, OBS_DIM), dtype=np.float64)
    poses = np.zeros((steps, n_workers, 3), dtype=np.int64)
    actions = np.zeros((steps, n_workers), dtype=np.int64)
    logps = np.zeros((steps, n_workers), dtype=np.float64)
    rewards = np.zeros((steps, n_workers), dtype=np.float64)
    dones = np.zeros((steps, n_workers), dtype=np.uint8)
    values = np.zeros((steps + 1, n_workers), dtype=np.float64)
    feats = np.zeros((steps, n_workers, FEAT_DIM), dtype=np.float64)
    ep_return_sum = np.zeros(n_workers, dtype=np.float64)
    ep_count = np.zeros(n_workers, dtype=np.int64)
    ep_solved = np.zeros(n_workers, dtype=np.int64)
    ep_max_return = np.zeros(n_workers, dtype=np.float64)
    env_steps = np.zeros(n_workers, dtype=np.int64)

    xs = np.full(n_workers, start_x, dtype=np.int64)
    ys = np.full(n_workers, start_y, dtype=np.int64)
    ds = np.full(n_workers, start_dir, dtype=np.int64)
    step_counts = np.zeros(n_workers, dtype=np.int64)
    ep_returns = np.zeros(n_workers, dtype=np.float64)
    frozen = np.zeros(n_workers, dtype=bool)

    for t in range(steps):
        for i in range(n_workers):
            if frozen[i]:
                dones[t, i] = 1
                actions[t, i] = -1
                continue
            _observe(
                walls, xs[i], ys[i], ds[i], goal_x, goal_y, obs[t, i], feats[t, i]
            )
            poses[t, i, 0] = xs[i]
            poses[t, i, 1] = ys[i]
            poses[t, i, 2] = ds[i]
        live = ~frozen
        if live.any():
            logits, value = _forward(obs[t, live], w1, b1, w2, b2, wp, bp, wv, bv)
            values[t, live] = value
            m = logits.max(axis=1, keepdims=True)
            log_z = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
            if deterministic:
                act = logits.argmax(axis=1)
            else:
                probs = np.exp(logits - log_z[:, None])
                cum = np.cumsum(probs, axis=1)
                u = uniforms[t, live]
                act = (u[:, None] >= cum).sum(axis=1)
                np.clip(act, 0, N_ACTIONS - 1, out=act)
            rows = np.nonzero(live)[0]
            actions[t, rows] = act
            logps[t, rows] = logits[np.arange(rows.size), act] - log_z
            for idx, i in enumerate(rows):
                feats[t, i, 2 + N_DIRS + act[idx]] = 1.0

        for i in range(n_workers):
            if frozen[i]:
                continue
            a = actions[t, i]
            if a == ACTION_FORWARD:
                nx = xs[i] + _DX[ds[i]]
                ny = ys[i] + _DY[ds[i]]
                inside = 0 <= nx < grid_w and 0 <= ny < grid_h
                if inside and not walls[ny, nx]:
                    xs[i], ys[i] = nx, ny
            elif a == 1:
                ds[i] = (ds[i] + 3) % N_DIRS
            else:
                ds[i] = (ds[i] + 1) % N_DIRS
            step_counts[i] += 1
            env_steps[i] += 1
            reward = 0.0
            done = False
            if xs[i] == goal_x and ys[i] == goal_y:
                done = True
                reward = 1.0 - step_counts[i] / h_max
            elif step_counts[i] >= h_max:
                done = True
            rewards[t, i] = reward
            ep_returns[i] += reward
            if done:
                dones[t, i] = 1
                ep_return_sum[i] += ep_returns[i]
                ep_count[i] += 1
                if reward > 0.0:
                    ep_solved[i] += 1
                if ep_returns[i] > ep_max_return[i]:
                    ep_max_return[i] = ep_returns[i]
                ep_returns[i] = 0.0
                if auto_reset:
                    xs[i], ys[i], ds[i] = start_x, start_y, start_dir
                    step_counts[i] = 0
                else:
                    frozen[i] = True

    live = ~frozen
    if live.any():
        final_obs = np.zeros((int(live.sum()), OBS_DIM), dtype=np.float64)
        scratch = np.zeros(FEAT_DIM, dtype=np.float64)
        for idx, i in enumerate(np.nonzero(live)[0]):
            scratch[:] = 0.0
            _observe(walls, xs[i], ys[i], ds[i], goal_x, goal_y, final_obs[idx], scratch)
        _, value = _forward(final_obs, w1, b1, w2, b2, wp, bp, wv, bv)
        values[steps, live] = value

    return (
        obs,
        poses,
        actions,
        logps,
        rewards,
        dones,
        values,
        feats,
        ep_return_sum,
        ep_count,
        ep_solved,
        ep_max_return,
        env_steps,
    )
