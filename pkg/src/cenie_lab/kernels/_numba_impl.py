"""Numba kernel implementations, semantics-identical to ``_numpy_impl``.

All kernels are single-threaded ``@njit(cache=True)`` functions. ``fastmath``
is intentionally off so IEEE ordering, and with it the tolerance and
reproducibility guarantees, survive compilation. RNG never lives in here:
callers pass pre-drawn uniforms.
"""

import numpy as np
from numba import njit

from ..constants import (
    ACTION_FORWARD,
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
_VIEW_SPAN = 2 * VIEW_LATERAL + 1


@njit(cache=True)
def component_log_densities(x, means, prec_chol, log_det_chol):
    n, d = x.shape
    k = means.shape[0]
    out = np.empty((n, k), dtype=np.float64)
    const = -0.5 * d * np.log(2.0 * np.pi)
    for j in range(k):
        for i in range(n):
            maha = 0.0
            for r in range(d):
                acc = 0.0
                for c in range(r + 1):
                    acc += prec_chol[j, r, c] * (x[i, c] - means[j, c])
                maha += acc * acc
            out[i, j] = const + log_det_chol[j] - 0.5 * maha
    return out


@njit(cache=True)
def silhouette_samples(x, labels, n_clusters):
    n, d = x.shape
    counts = np.zeros(n_clusters, dtype=np.float64)
    for i in range(n):
        counts[labels[i]] += 1.0
    out = np.zeros(n, dtype=np.float64)
    dsum = np.zeros((n, n_clusters), dtype=np.float64)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            acc = 0.0
            for c in range(d):
                diff = x[i, c] - x[j, c]
                acc += diff * diff
            dsum[i, labels[j]] += np.sqrt(acc)
    for i in range(n):
        own = labels[i]
        if counts[own] <= 1.0:
            continue
        a = dsum[i, own] / (counts[own] - 1.0)
        b = np.inf
        for j in range(n_clusters):
            if j == own or counts[j] == 0.0:
                continue
            cand = dsum[i, j] / counts[j]
            if cand < b:
                b = cand
        denom = max(a, b)
        if denom > 0.0:
            out[i] = (b - a) / denom
    return out


@njit(cache=True)
def gae_scan(rewards, values, dones, gamma, lam):
    t_len, w = rewards.shape
    adv = np.zeros((t_len, w), dtype=np.float64)
    lastgaelam = np.zeros(w, dtype=np.float64)
    for t in range(t_len - 1, -1, -1):
        for i in range(w):
            nonterminal = 1.0 - dones[t, i]
            delta = rewards[t, i] + gamma * values[t + 1, i] * nonterminal - values[t, i]
            lastgaelam[i] = delta + gamma * lam * nonterminal * lastgaelam[i]
            adv[t, i] = lastgaelam[i]
    return adv


@njit(cache=True)
def _observe(walls, x, y, d, gx, gy, obs_row, feat_row):
    h, w = walls.shape
    fx = _DX[d]
    fy = _DY[d]
    rd = (d + 1) % N_DIRS
    rx = _DX[rd]
    ry = _DY[rd]
    wall_cells = 0
    for f in range(1, VIEW_FORWARD + 1):
        for l in range(-VIEW_LATERAL, VIEW_LATERAL + 1):
            cx = x + f * fx + l * rx
            cy = y + f * fy + l * ry
            if cx < 0 or cx >= w or cy < 0 or cy >= h:
                code = CELL_OOB
            elif walls[cy, cx] != 0:
                code = CELL_WALL
                wall_cells += 1
            elif cx == gx and cy == gy:
                code = CELL_GOAL
            else:
                code = 0
            cell = (f - 1) * _VIEW_SPAN + (l + VIEW_LATERAL)
            obs_row[cell * N_CELL_CODES + code] = 1.0
    obs_row[VIEW_FORWARD * _VIEW_SPAN * N_CELL_CODES + d] = 1.0

    feat_row[0] = x / w
    feat_row[1] = y / h
    feat_row[2 + d] = 1.0
    feat_row[2 + N_DIRS + N_ACTIONS] = wall_cells / 25.0
    gf = (gx - x) * fx + (gy - y) * fy
    gl = (gx - x) * rx + (gy - y) * ry
    if gf >= 1 and gf <= VIEW_FORWARD and gl >= -VIEW_LATERAL and gl <= VIEW_LATERAL:
        dist = np.sqrt(float((gx - x) ** 2 + (gy - y) ** 2))
        feat_row[2 + N_DIRS + N_ACTIONS + 1] = dist / np.sqrt(float(w * w + h * h))
    else:
        feat_row[2 + N_DIRS + N_ACTIONS + 1] = 1.0


@njit(cache=True)
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
    frozen = np.zeros(n_workers, dtype=np.bool_)

    logits = np.zeros(N_ACTIONS, dtype=np.float64)
    for t in range(steps):
        for i in range(n_workers):
            if frozen[i]:
                dones[t, i] = 1
                actions[t, i] = -1
                continue
            _observe(walls, xs[i], ys[i], ds[i], goal_x, goal_y, obs[t, i], feats[t, i])
            poses[t, i, 0] = xs[i]
            poses[t, i, 1] = ys[i]
            poses[t, i, 2] = ds[i]

            h1 = np.tanh(np.dot(obs[t, i], w1) + b1)
            h2 = np.tanh(np.dot(h1, w2) + b2)
            logits_vec = np.dot(h2, wp)
            for a in range(N_ACTIONS):
                logits[a] = logits_vec[a] + bp[a]
            values[t, i] = np.dot(h2, wv) + bv

            m = logits[0]
            for a in range(1, N_ACTIONS):
                if logits[a] > m:
                    m = logits[a]
            z = 0.0
            for a in range(N_ACTIONS):
                z += np.exp(logits[a] - m)
            log_z = m + np.log(z)

            if deterministic:
                act = 0
                best = logits[0]
                for a in range(1, N_ACTIONS):
                    if logits[a] > best:
                        best = logits[a]
                        act = a
            else:
                u = uniforms[t, i]
                cum = 0.0
                act = 0
                for a in range(N_ACTIONS):
                    cum += np.exp(logits[a] - log_z)
                    if u >= cum:
                        act = a + 1
                if act > N_ACTIONS - 1:
                    act = N_ACTIONS - 1
            actions[t, i] = act
            logps[t, i] = logits[act] - log_z
            feats[t, i, 2 + N_DIRS + act] = 1.0

            if act == ACTION_FORWARD:
                nx = xs[i] + _DX[ds[i]]
                ny = ys[i] + _DY[ds[i]]
                if nx >= 0 and nx < grid_w and ny >= 0 and ny < grid_h and walls[ny, nx] == 0:
                    xs[i] = nx
                    ys[i] = ny
            elif act == 1:
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
                    xs[i] = start_x
                    ys[i] = start_y
                    ds[i] = start_dir
                    step_counts[i] = 0
                else:
                    frozen[i] = True

    obs_row = np.zeros(OBS_DIM, dtype=np.float64)
    feat_scratch = np.zeros(FEAT_DIM, dtype=np.float64)
    for i in range(n_workers):
        if frozen[i]:
            continue
        for z in range(OBS_DIM):
            obs_row[z] = 0.0
        for z in range(FEAT_DIM):
            feat_scratch[z] = 0.0
        _observe(walls, xs[i], ys[i], ds[i], goal_x, goal_y, obs_row, feat_scratch)
        h1 = np.tanh(np.dot(obs_row, w1) + b1)
        h2 = np.tanh(np.dot(h1, w2) + b2)
        values[steps, i] = np.dot(h2, wv) + bv

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
