"""Feedforward PPO student with self-contained gradients.

One shared tanh trunk (two hidden layers) maps the flattened observation to
3 action logits and a scalar value. Losses: clipped surrogate policy loss,
clipped value loss, optional entropy bonus; advantages are normalized per
update batch; gradients are clipped by global norm and applied with Adam.
All derivatives are hand-derived; a finite-difference oracle in the tests
checks every parameter.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .constants import N_ACTIONS, OBS_DIM
from .maze_env import Level, Observation, level_to_arrays, observation_to_policy_input
from .util import atomic_write_bytes


@dataclass(frozen=True)
class PpoConfig:
    learning_rate: float = 1e-4
    adam_epsilon: float = 1e-5
    gamma: float = 0.995
    gae_lambda: float = 0.95
    clip_coef: float = 0.2
    epochs: int = 5
    minibatches: int = 1
    value_loss_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    value_clipping: bool = True
    advantage_normalization: bool = True
    rollout_length: int = 256
    workers: int = 8
    hidden_size: int = 64

    def __post_init__(self):
        if self.epochs < 1 or self.minibatches < 1:
            raise ValueError("epochs and minibatches must be >= 1")
        if self.rollout_length < 1 or self.workers < 1:
            raise ValueError("rollout_length and workers must be >= 1")
        if not 0 < self.clip_coef < 1:
            raise ValueError("clip_coef must lie in (0, 1)")


@dataclass
class PolicyParams:
    """Trunk and head arrays. ``wv`` is the value head as a vector, ``bv``
    its scalar bias."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wp: np.ndarray
    bp: np.ndarray
    wv: np.ndarray
    bv: float

    _FIELDS = ("w1", "b1", "w2", "b2", "wp", "bp", "wv", "bv")

    def flat(self) -> np.ndarray:
        parts = [np.atleast_1d(np.asarray(getattr(self, f), dtype=np.float64)).ravel()
                 for f in self._FIELDS]
        return np.concatenate(parts)

    def shapes(self):
        return [tuple(np.shape(getattr(self, f))) for f in self._FIELDS]

    @staticmethod
    def from_flat(flat: np.ndarray, obs_dim: int, hidden: int) -> "PolicyParams":
        shapes = [
            (obs_dim, hidden), (hidden,), (hidden, hidden), (hidden,),
            (hidden, N_ACTIONS), (N_ACTIONS,), (hidden,), (),
        ]
        parts = []
        offset = 0
        for s in shapes:
            size = int(np.prod(s)) if s else 1
            chunk = flat[offset:offset + size]
            parts.append(float(chunk[0]) if s == () else chunk.reshape(s).copy())
            offset += size
        if offset != flat.size:
            raise ValueError("flat parameter vector has the wrong length")
        return PolicyParams(*parts)

    def copy(self) -> "PolicyParams":
        return PolicyParams.from_flat(self.flat(), self.w1.shape[0], self.w1.shape[1])


def param_hash(params: PolicyParams) -> str:
    return hashlib.sha1(params.flat().tobytes()).hexdigest()


def _orthogonal(rng, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_policy(rng_seed: int, hidden_size: int = 64, obs_dim: int = OBS_DIM) -> PolicyParams:
    """Orthogonal trunk (gain sqrt(2)), small policy head, unit value head;
    deterministic in the seed."""
    rng = np.random.default_rng(rng_seed)
    return PolicyParams(
        w1=_orthogonal(rng, obs_dim, hidden_size, np.sqrt(2.0)),
        b1=np.zeros(hidden_size),
        w2=_orthogonal(rng, hidden_size, hidden_size, np.sqrt(2.0)),
        b2=np.zeros(hidden_size),
        wp=_orthogonal(rng, hidden_size, N_ACTIONS, 0.01),
        bp=np.zeros(N_ACTIONS),
        wv=_orthogonal(rng, hidden_size, 1, 1.0)[:, 0],
        bv=0.0,
    )


def forward_batch(params: PolicyParams, x: np.ndarray):
    """Batched trunk pass. Returns (logits (n, 3), values (n,), h1, h2)."""
    h1 = np.tanh(x @ params.w1 + params.b1)
    h2 = np.tanh(h1 @ params.w2 + params.b2)
    logits = h2 @ params.wp + params.bp
    values = h2 @ params.wv + params.bv
    return logits, values, h1, h2


def forward(params: PolicyParams, observation):
    """Single observation (Observation or flat input) -> (logits, value)."""
    if isinstance(observation, Observation):
        x = observation_to_policy_input(observation)
    else:
        x = np.asarray(observation, dtype=np.float64)
    if x.shape != (params.w1.shape[0],):
        raise ValueError("observation does not match the policy input width")
    logits, values, _, _ = forward_batch(params, x[None, :])
    return logits[0], float(values[0])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    return logits - (m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True)))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999

    @staticmethod
    def zeros(n: int) -> "AdamState":
        return AdamState(m=np.zeros(n), v=np.zeros(n))


def _loss_and_grads(params: PolicyParams, obs, actions, old_logp, adv, returns,
                    old_values, config: PpoConfig):
    n = obs.shape[0]
    c = config.clip_coef
    logits, values, h1, h2 = forward_batch(params, obs)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    rows = np.arange(n)
    logp_a = logp_all[rows, actions]
    ratio = np.exp(logp_a - old_logp)

    unclipped = ratio * adv
    clipped_ratio = np.clip(ratio, 1.0 - c, 1.0 + c)
    clipped = clipped_ratio * adv
    policy_loss = -np.minimum(unclipped, clipped).mean()

    err = values - returns
    if config.value_clipping:
        v_clip = old_values + np.clip(values - old_values, -c, c)
        err_clip = v_clip - returns
        sel_unclipped = err**2 >= err_clip**2
        value_loss = 0.5 * np.maximum(err**2, err_clip**2).mean()
    else:
        sel_unclipped = np.ones(n, dtype=bool)
        err_clip = err
        value_loss = 0.5 * (err**2).mean()

    entropy_i = -(probs * logp_all).sum(axis=1)
    entropy = entropy_i.mean()
    total = policy_loss + config.value_loss_coef * value_loss - config.entropy_coef * entropy
    if not np.isfinite(total):
        raise RuntimeError(
            f"non-finite loss (policy={policy_loss!r}, value={value_loss!r}, "
            f"entropy={entropy!r})"
        )

    # d(policy_loss)/d(ratio): unclipped branch on ties, zero outside the clip
    # interval on the clipped branch.
    inside = (ratio > 1.0 - c) & (ratio < 1.0 + c)
    dratio = np.where(unclipped <= clipped, adv, adv * inside)
    dlogp_a = -(1.0 / n) * dratio * ratio
    onehot = np.zeros((n, N_ACTIONS))
    onehot[rows, actions] = 1.0
    dlogits = dlogp_a[:, None] * (onehot - probs)
    if config.entropy_coef != 0.0:
        dlogits += (config.entropy_coef / n) * probs * (logp_all + entropy_i[:, None])

    inside_v = (values - old_values > -c) & (values - old_values < c)
    dvalues = (config.value_loss_coef / n) * np.where(
        sel_unclipped, err, err_clip * inside_v
    )

    dh2 = dlogits @ params.wp.T + dvalues[:, None] * params.wv[None, :]
    dz2 = dh2 * (1.0 - h2**2)
    dh1 = dz2 @ params.w2.T
    dz1 = dh1 * (1.0 - h1**2)
    grads = PolicyParams(
        w1=obs.T @ dz1,
        b1=dz1.sum(axis=0),
        w2=h1.T @ dz2,
        b2=dz2.sum(axis=0),
        wp=h2.T @ dlogits,
        bp=dlogits.sum(axis=0),
        wv=h2.T @ dvalues,
        bv=float(dvalues.sum()),
    )
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "total_loss": float(total),
        "approx_kl": float(np.mean(old_logp - logp_a)),
        "max_ratio_dev": float(np.abs(ratio - 1.0).max()),
    }
    return total, grads, stats


def ppo_update(params: PolicyParams, adam: AdamState, batch: dict, config: PpoConfig,
               rng=None):
    """One PPO update over the batch: ``epochs`` passes, optional minibatch
    shuffling, global-norm clipping, Adam. Returns (params, adam, stats);
    stats include the first-epoch max |ratio - 1| (log-prob bookkeeping
    check) and the last pre-clip gradient norm."""
    obs = np.asarray(batch["obs"], dtype=np.float64)
    actions = np.asarray(batch["actions"], dtype=np.int64)
    old_logp = np.asarray(batch["old_logp"], dtype=np.float64)
    adv = np.asarray(batch["advantages"], dtype=np.float64)
    returns = np.asarray(batch["returns"], dtype=np.float64)
    old_values = np.asarray(batch["old_values"], dtype=np.float64)
    n = obs.shape[0]
    if config.minibatches > n:
        raise ValueError("more minibatches than samples")
    if config.minibatches > 1 and rng is None:
        raise ValueError("minibatch shuffling needs an rng")

    if config.advantage_normalization:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    flat = params.flat()
    obs_dim, hidden = params.w1.shape
    first_epoch_ratio_dev = None
    stats = {}
    grad_norm = 0.0
    for epoch in range(config.epochs):
        if config.minibatches == 1:
            slices = [np.arange(n)]
        else:
            perm = rng.permutation(n)
            slices = np.array_split(perm, config.minibatches)
        for mb in slices:
            cur = PolicyParams.from_flat(flat, obs_dim, hidden)
            _, grads, stats = _loss_and_grads(
                cur, obs[mb], actions[mb], old_logp[mb], adv[mb], returns[mb],
                old_values[mb], config,
            )
            if epoch == 0 and first_epoch_ratio_dev is None:
                first_epoch_ratio_dev = stats["max_ratio_dev"]
            g = grads.flat()
            grad_norm = float(np.sqrt((g * g).sum()))
            if grad_norm > config.max_grad_norm:
                g *= config.max_grad_norm / grad_norm
            adam.t += 1
            adam.m = adam.beta1 * adam.m + (1.0 - adam.beta1) * g
            adam.v = adam.beta2 * adam.v + (1.0 - adam.beta2) * g * g
            m_hat = adam.m / (1.0 - adam.beta1**adam.t)
            v_hat = adam.v / (1.0 - adam.beta2**adam.t)
            flat = flat - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)

    new_params = PolicyParams.from_flat(flat, obs_dim, hidden)
    stats = dict(stats)
    stats["first_epoch_ratio_dev"] = float(first_epoch_ratio_dev)
    stats["grad_norm"] = grad_norm
    return new_params, adam, stats


@dataclass
class RolloutBatch:
    """Lockstep rollout of all workers on one level, plus per-step coverage
    features and per-worker episode aggregates."""

    obs: np.ndarray        # (t, w, obs_dim)
    poses: np.ndarray      # (t, w, 3) int64
    actions: np.ndarray    # (t, w)
    logps: np.ndarray      # (t, w)
    rewards: np.ndarray    # (t, w)
    dones: np.ndarray      # (t, w) uint8
    values: np.ndarray     # (t+1, w)
    features: np.ndarray   # (t, w, feat_dim)
    advantages: np.ndarray  # (t, w)
    returns: np.ndarray    # (t, w)
    ep_return_sum: np.ndarray
    ep_count: np.ndarray
    ep_solved: np.ndarray
    ep_max_return: np.ndarray
    env_steps: int

    @property
    def steps(self) -> int:
        return self.obs.shape[0]

    @property
    def workers(self) -> int:
        return self.obs.shape[1]

    def pvl_score(self) -> float:
        return float(np.maximum(self.advantages, 0.0).mean())

    def feature_matrix(self) -> np.ndarray:
        t, w, d = self.features.shape
        return self.features.reshape(t * w, d)

    def flat_batch(self) -> dict:
        t, w, od = self.obs.shape
        return {
            "obs": self.obs.reshape(t * w, od),
            "actions": self.actions.reshape(t * w),
            "old_logp": self.logps.reshape(t * w),
            "advantages": self.advantages.reshape(t * w),
            "returns": self.returns.reshape(t * w),
            "old_values": self.values[:-1].reshape(t * w),
        }

    def mean_episode_return(self) -> float:
        done = int(self.ep_count.sum())
        return float(self.ep_return_sum.sum() / done) if done else 0.0

    def solved_fraction(self) -> float:
        done = int(self.ep_count.sum())
        return float(self.ep_solved.sum() / done) if done else 0.0


def collect_rollout(params: PolicyParams, level: Level, config: PpoConfig, rng,
                    h_max: int, steps: int = None, workers: int = None,
                    auto_reset: bool = True, deterministic: bool = False) -> RolloutBatch:
    """Run the rollout kernel for (steps x workers) on one level and attach
    generalized advantages. ``deterministic`` draws no randomness (argmax
    actions), so it leaves ``rng`` untouched."""
    t = config.rollout_length if steps is None else steps
    w = config.workers if workers is None else workers
    walls, sx, sy, sd, gx, gy = level_to_arrays(level)
    if deterministic:
        uniforms = np.zeros((t, w), dtype=np.float64)
    else:
        uniforms = rng.random((t, w))
    out = kernels.rollout_batch(
        walls, sx, sy, sd, gx, gy, h_max, t,
        params.w1, params.b1, params.w2, params.b2,
        params.wp, params.bp, params.wv, float(params.bv),
        uniforms, auto_reset, deterministic,
    )
    (obs, poses, actions, logps, rewards, dones, values, feats,
     ep_return_sum, ep_count, ep_solved, ep_max_return, env_steps) = out
    advantages = kernels.gae_scan(
        rewards, values, dones.astype(np.float64), config.gamma, config.gae_lambda
    )
    returns = advantages + values[:-1]
    return RolloutBatch(
        obs=obs, poses=poses, actions=actions, logps=logps, rewards=rewards,
        dones=dones, values=values, features=feats, advantages=advantages,
        returns=returns, ep_return_sum=ep_return_sum, ep_count=ep_count,
        ep_solved=ep_solved, ep_max_return=ep_max_return,
        env_steps=int(env_steps.sum()),
    )


CHECKPOINT_FORMAT = "cenie-lab-policy"


def save_checkpoint(path: str, params: PolicyParams, meta: dict = None) -> None:
    """One file: a JSON header line, then the flat little-endian float64
    parameter blob. Loading restores bit-identical forward passes."""
    flat = params.flat()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "obs_dim": int(params.w1.shape[0]),
        "hidden_size": int(params.w1.shape[1]),
        "n_params": int(flat.size),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode() + b"\n"
    blob += flat.astype("<f8").tobytes()
    atomic_write_bytes(path, blob)


def load_checkpoint(path: str):
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode())
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a policy checkpoint")
    flat = np.frombuffer(raw[nl + 1:], dtype="<f8").astype(np.float64)
    if flat.size != header["n_params"]:
        raise ValueError("checkpoint blob length mismatch")
    params = PolicyParams.from_flat(flat, header["obs_dim"], header["hidden_size"])
    return params, header["meta"]
