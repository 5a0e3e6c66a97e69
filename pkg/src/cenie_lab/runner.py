"""Curriculum orchestration: domain randomization, prioritized level replay,
and edit-based curricula, each optionally mixing the GMM coverage-novelty
channel into replay priorities.

Five algorithms share one loop skeleton:

* ``dr``          - fresh random level every iteration, always train.
* ``plr``         - replay/explore branches over a prioritized buffer,
                    regret-only scores (the novelty machinery is off).
* ``plr-cenie``   - plr plus the novelty channel mixed in by ``alpha``.
* ``accel``       - plr skeleton whose replay branch also edits the replayed
                    level and scores the edit with a stop-gradient rollout.
* ``accel-cenie`` - accel plus the novelty channel.

Policy gradients flow only in replay branches (and every dr iteration);
level scoring always uses stop-gradient rollouts. Named RNG streams keep
replay decisions, level randomness, action sampling, GMM seeding and
evaluation independent, which makes ``plr`` vs ``plr-cenie (alpha=0, refits
disabled)`` an exact reduction and reruns bit-reproducible per backend.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__, coverage, evaluation, gmm, kernels, level_buffer, maze_env
from .level_buffer import BufferConfig, LevelBufferEntry
from .student import (
    AdamState,
    PolicyParams,
    PpoConfig,
    collect_rollout,
    init_policy,
    param_hash,
    ppo_update,
    save_checkpoint,
)
from .util import atomic_write_json, atomic_write_text, derive_seed, fmt_float

ALGORITHMS = ("dr", "plr", "plr-cenie", "accel", "accel-cenie")

# Named RNG stream tags (derive_seed(seed, tag, ...)).
_STREAM_DECISION = 1
_STREAM_LEVEL = 2
_STREAM_ACTION = 3
_STREAM_EVAL = 4
_STREAM_POLICY = 5
_STREAM_GMM = 6


class RunConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Full experiment description; the manifest serializes exactly this."""

    algorithm: str = "plr-cenie"
    seed: int = 0
    total_ppo_updates: int = 1500
    eval_interval: int = 200     # iterations between metric rows (0 = none)
    metric_eval_episodes: int = 8
    eval_episodes: int = 100     # final held-out evaluation
    checkpoint_every: int = 0    # iterations (0 = final checkpoint only)
    grid_size: int = 9
    h_max: int = 100
    wall_count_min: int = 0
    wall_count_max: int = 25
    buffer_capacity: int = 128
    beta: float = 0.3
    rho: float = 0.5
    alpha: float = 0.5
    replay_rate: float = None    # None = 0.8 for accel variants, else 0.5
    scoring: str = "pvl"         # pvl | maxmc
    window_levels: int = 32
    k_min: int = 2
    k_max: int = 6
    gmm_max_iterations: int = 50
    gmm_convergence_epsilon: float = 1e-3
    covariance_regularization: float = 1e-2
    refit_every: int = 4         # replay branches per refit; 0 disables fitting
    num_edits: int = 5
    accel_seed_wall_min: int = 0
    accel_seed_wall_max: int = 3
    debug_checks: bool = False
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise RunConfigError(
                f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}"
            )
        if self.scoring not in ("pvl", "maxmc"):
            raise RunConfigError(f"unknown scoring {self.scoring!r}")
        if self.total_ppo_updates < 1:
            raise RunConfigError("total_ppo_updates must be >= 1")
        if not 1 <= self.k_min <= self.k_max:
            raise RunConfigError("need 1 <= k_min <= k_max")
        if self.grid_size < 3:
            raise RunConfigError("grid_size must be >= 3")
        if not (self.replay_rate is None or 0.0 <= self.replay_rate <= 1.0):
            raise RunConfigError("replay_rate must lie in [0, 1]")
        if self.refit_every < 0 or self.window_levels < 1:
            raise RunConfigError("bad window/refit configuration")

    @property
    def resolved_replay_rate(self) -> float:
        if self.replay_rate is not None:
            return self.replay_rate
        return 0.8 if self.algorithm.startswith("accel") else 0.5

    @property
    def uses_buffer(self) -> bool:
        return self.algorithm != "dr"

    @property
    def uses_editor(self) -> bool:
        return self.algorithm.startswith("accel")

    @property
    def novelty_enabled(self) -> bool:
        return self.algorithm.endswith("cenie")

    def buffer_config(self) -> BufferConfig:
        alpha = self.alpha if self.novelty_enabled else 0.0
        return BufferConfig(
            capacity=self.buffer_capacity,
            beta=self.beta,
            rho=self.rho,
            alpha=alpha,
            replay_rate=self.resolved_replay_rate,
        )

    def fit_config(self) -> gmm.FitConfig:
        return gmm.FitConfig(
            n_components=self.k_min,
            max_iterations=self.gmm_max_iterations,
            convergence_epsilon=self.gmm_convergence_epsilon,
            covariance_regularization=self.covariance_regularization,
            rng_seed=0,  # overridden per refit
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        ppo = d.pop("ppo", {})
        known = {f.name for f in RunConfig.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise RunConfigError(f"unknown config keys: {sorted(unknown)}")
        ppo_known = {f.name for f in PpoConfig.__dataclass_fields__.values()}
        ppo_unknown = set(ppo) - ppo_known
        if ppo_unknown:
            raise RunConfigError(f"unknown ppo config keys: {sorted(ppo_unknown)}")
        return RunConfig(ppo=PpoConfig(**ppo), **d)


METRICS_COLUMNS = [
    "iteration",
    "ppo_updates",
    "env_steps",
    "mean_return",
    "buffer_size",
    "buffer_mean_regret",
    "buffer_mean_novelty",
    "coverage_fraction",
]


def evaluate_level_stop_gradient(params: PolicyParams, level, model,
                                 ppo_config: PpoConfig, h_max: int, rng,
                                 deterministic: bool = False):
    """Score one level without touching the policy: one rollout, PVL regret,
    novelty against ``model`` (0.0 with ``fitted=False`` when the model is
    None). Returns (regret, novelty, fitted, batch)."""
    batch = collect_rollout(
        params, level, ppo_config, rng, h_max, deterministic=deterministic
    )
    regret = batch.pvl_score()
    if model is None:
        return regret, 0.0, False, batch
    novelty = coverage.novelty_score(model, batch.feature_matrix())
    return regret, novelty, True, batch


class UedRun:
    """One seeded curriculum run. ``run()`` drives it to the update budget;
    artifacts land in ``out_dir`` when given."""

    def __init__(self, config: RunConfig, out_dir: str = None):
        self.cfg = config
        self.out_dir = out_dir
        self.bcfg = config.buffer_config()
        seed = config.seed
        self.decision_rng = np.random.default_rng(derive_seed(seed, _STREAM_DECISION))
        self.level_rng = np.random.default_rng(derive_seed(seed, _STREAM_LEVEL))
        self.action_rng = np.random.default_rng(derive_seed(seed, _STREAM_ACTION))
        self.params = init_policy(
            derive_seed(seed, _STREAM_POLICY), hidden_size=config.ppo.hidden_size
        )
        self.adam = AdamState.zeros(self.params.flat().size)
        self.entries: list = []
        self.window = coverage.CoverageWindow(config.window_levels)
        self.model = None
        self.iteration = 0
        self.ppo_updates = 0
        self.env_steps = 0
        self.refits = 0
        self.explore_count = 0
        self.replay_count = 0
        self.visited = set()
        self.suite = maze_env.held_out_suite(config.grid_size)
        self.metrics_rows: list = []
        self.provenance: list = []
        self._return_sum = 0.0
        self._return_count = 0
        self._universe = evaluation.full_grid_universe(config.grid_size, config.grid_size)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            self.write_manifest()

    # ------------------------------------------------------------- plumbing

    def write_manifest(self):
        manifest = {
            "kind": "cenie-lab-run",
            "version": __version__,
            "backend": kernels.BACKEND,
            "config": self.cfg.to_dict(),
        }
        atomic_write_json(os.path.join(self.out_dir, "run-manifest.json"), manifest)

    def _event(self, event: str, level_id: str, parent_id=None, regret=None,
               novelty=None):
        self.provenance.append(
            {
                "iteration": self.iteration,
                "event": event,
                "level_id": level_id,
                "parent_id": parent_id,
                "regret": regret,
                "novelty": novelty,
            }
        )

    def _novelty(self, feature_matrix) -> float:
        if not self.cfg.novelty_enabled or self.model is None:
            return 0.0
        return coverage.novelty_score(self.model, feature_matrix)

    def _train_rollout(self, level):
        batch = collect_rollout(
            self.params, level, self.cfg.ppo, self.action_rng, self.cfg.h_max
        )
        self.env_steps += batch.env_steps
        self.visited.update(
            evaluation.encode_tuples(batch.poses, batch.actions, self.cfg.grid_size).tolist()
        )
        done = int(batch.ep_count.sum())
        if done:
            self._return_sum += float(batch.ep_return_sum.sum())
            self._return_count += done
        return batch

    def _stop_gradient_rollout(self, level):
        before = param_hash(self.params) if self.cfg.debug_checks else None
        batch = collect_rollout(
            self.params, level, self.cfg.ppo, self.action_rng, self.cfg.h_max
        )
        self.env_steps += batch.env_steps
        if self.cfg.debug_checks and param_hash(self.params) != before:
            raise RuntimeError("policy parameters changed during stop-gradient scoring")
        return batch

    def _update_policy(self, batch):
        self.params, self.adam, stats = ppo_update(
            self.params, self.adam, batch.flat_batch(), self.cfg.ppo
        )
        self.ppo_updates += 1
        return stats

    def _entry_regret(self, batch, entry=None) -> float:
        if self.cfg.scoring == "maxmc":
            observed = float(batch.ep_max_return.max()) if batch.ep_count.sum() else 0.0
            prev = entry.max_return if entry is not None and entry.max_return is not None else observed
            max_ret = max(prev, observed)
            if entry is not None:
                entry.max_return = max_ret
            total = float(batch.rewards.sum()) / batch.workers
            return max_ret - total
        return batch.pvl_score()

    def _maybe_refit(self):
        if not self.cfg.novelty_enabled or self.cfg.refit_every == 0:
            return
        if self.replay_count % self.cfg.refit_every != 0:
            return
        self._refit_now()

    def _refit_now(self):
        self.refits += 1
        seed = derive_seed(self.cfg.seed, _STREAM_GMM, self.refits)
        self.model = coverage.refit(
            self.window,
            (self.cfg.k_min, self.cfg.k_max),
            self.cfg.fit_config(),
            rng_seed=seed,
            previous=self.model,
            fitted_at=self.iteration,
        )

    # ------------------------------------------------------------- branches

    def _seed_buffer(self):
        wall_range = (
            (self.cfg.accel_seed_wall_min, self.cfg.accel_seed_wall_max)
            if self.cfg.uses_editor
            else (self.cfg.wall_count_min, self.cfg.wall_count_max)
        )
        fill_features = []
        for _ in range(self.cfg.buffer_capacity):
            level = maze_env.generate_random_level(
                self.cfg.grid_size, wall_range, self.level_rng
            )
            batch = self._stop_gradient_rollout(level)
            entry = LevelBufferEntry(
                level=level,
                regret_score=0.0,
                novelty_score=0.0,
                inserted_episode=0,
                last_replay_episode=0,
            )
            entry.regret_score = self._entry_regret(batch, entry if self.cfg.scoring == "maxmc" else None)
            feats = batch.feature_matrix()
            fill_features.append(feats)
            self.entries.append(entry)
            self._event("insert", level.level_id, regret=entry.regret_score, novelty=0.0)
            if self.cfg.novelty_enabled:
                coverage.update_window(self.window, level.level_id, feats)
        if self.cfg.novelty_enabled and self.cfg.refit_every > 0:
            self._refit_now()
            if self.model is not None:
                for entry, feats in zip(self.entries, fill_features):
                    entry.novelty_score = coverage.novelty_score(self.model, feats)

    def _explore_branch(self):
        self.explore_count += 1
        level = maze_env.generate_random_level(
            self.cfg.grid_size,
            (self.cfg.wall_count_min, self.cfg.wall_count_max),
            self.level_rng,
        )
        batch = self._stop_gradient_rollout(level)
        entry = LevelBufferEntry(
            level=level,
            regret_score=0.0,
            novelty_score=0.0,
            inserted_episode=self.iteration,
            last_replay_episode=self.iteration,
        )
        entry.regret_score = self._entry_regret(batch, entry if self.cfg.scoring == "maxmc" else None)
        entry.novelty_score = self._novelty(batch.feature_matrix())
        self._insert_with_provenance(entry, parent_id=None)

    def _insert_with_provenance(self, entry: LevelBufferEntry, parent_id):
        at_capacity = len(self.entries) >= self.bcfg.capacity
        before = {id(e): e.level.level_id for e in self.entries} if at_capacity else None
        inserted = level_buffer.insert_if_better(
            self.entries, entry, self.bcfg, self.iteration
        )
        if inserted and at_capacity:
            after = {id(e) for e in self.entries}
            for key, lid in before.items():
                if key not in after:
                    self._event("evict", lid)
        self._event(
            "insert" if inserted else "reject",
            entry.level.level_id,
            parent_id=parent_id,
            regret=entry.regret_score,
            novelty=entry.novelty_score,
        )
        return inserted

    def _replay_branch(self):
        self.replay_count += 1
        entry = level_buffer.sample_replay(
            self.entries, self.bcfg, self.iteration, self.level_rng
        )
        self._event("replay", entry.level.level_id)
        batch = self._train_rollout(entry.level)
        self._update_policy(batch)
        # Pre-refit refresh from the training trajectory.
        entry.regret_score = self._entry_regret(batch, entry)
        entry.novelty_score = self._novelty(batch.feature_matrix())
        if self.cfg.novelty_enabled:
            coverage.update_window(self.window, entry.level.level_id, batch.feature_matrix())
        self._maybe_refit()
        if self.cfg.uses_editor:
            edited = maze_env.edit_level(entry.level, self.cfg.num_edits, self.level_rng)
            ebatch = self._stop_gradient_rollout(edited)
            child = LevelBufferEntry(
                level=edited,
                regret_score=0.0,
                novelty_score=0.0,
                inserted_episode=self.iteration,
                last_replay_episode=self.iteration,
            )
            child.regret_score = self._entry_regret(ebatch, child if self.cfg.scoring == "maxmc" else None)
            child.novelty_score = self._novelty(ebatch.feature_matrix())
            self._insert_with_provenance(child, parent_id=entry.level.level_id)
        else:
            sbatch = self._stop_gradient_rollout(entry.level)
            entry.regret_score = self._entry_regret(sbatch, entry)
            entry.novelty_score = self._novelty(sbatch.feature_matrix())
            self._event(
                "rescore",
                entry.level.level_id,
                regret=entry.regret_score,
                novelty=entry.novelty_score,
            )

    def _dr_iteration(self):
        level = maze_env.generate_random_level(
            self.cfg.grid_size,
            (self.cfg.wall_count_min, self.cfg.wall_count_max),
            self.level_rng,
        )
        batch = self._train_rollout(level)
        self._update_policy(batch)

    # ------------------------------------------------------------- metrics

    def buffer_fingerprint(self):
        """Tuple view of the buffer evolution state, for equivalence tests."""
        return tuple(
            (e.level.level_id, e.regret_score, e.novelty_score,
             e.inserted_episode, e.last_replay_episode)
            for e in self.entries
        )

    def coverage_fraction(self) -> float:
        return evaluation.coverage_fraction(self.visited, self._universe)

    def _metrics_row(self):
        row = {
            "iteration": self.iteration,
            "ppo_updates": self.ppo_updates,
            "env_steps": self.env_steps,
            "mean_return": (
                self._return_sum / self._return_count if self._return_count else 0.0
            ),
            "buffer_size": len(self.entries),
            "buffer_mean_regret": (
                float(np.mean([e.regret_score for e in self.entries]))
                if self.entries else 0.0
            ),
            "buffer_mean_novelty": (
                float(np.mean([e.novelty_score for e in self.entries]))
                if self.entries else 0.0
            ),
            "coverage_fraction": self.coverage_fraction(),
        }
        self._return_sum = 0.0
        self._return_count = 0
        eval_rng = np.random.default_rng(
            derive_seed(self.cfg.seed, _STREAM_EVAL, len(self.metrics_rows))
        )
        records = evaluation.solved_rate(
            self.params, self.suite, self.cfg.metric_eval_episodes,
            eval_rng, self.cfg.h_max,
        )
        for rec in records:
            row[f"solved_{rec.level_name}"] = rec.solved_rate
        self.metrics_rows.append(row)
        if self.out_dir:
            self._flush_metrics()

    def metrics_csv_text(self) -> str:
        if not self.metrics_rows:
            cols = METRICS_COLUMNS + [f"solved_{l.name}" for l in self.suite]
            return ",".join(cols) + "\n"
        cols = list(self.metrics_rows[0].keys())
        lines = [",".join(cols)]
        for row in self.metrics_rows:
            cells = []
            for c in cols:
                v = row[c]
                cells.append(str(v) if isinstance(v, int) else fmt_float(v))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def _flush_metrics(self):
        atomic_write_text(os.path.join(self.out_dir, "metrics.csv"), self.metrics_csv_text())

    def _flush_provenance(self):
        text = "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.provenance)
        atomic_write_text(os.path.join(self.out_dir, "provenance.jsonl"), text)

    def _checkpoint(self, tag: str = "checkpoint"):
        if not self.out_dir:
            return
        meta = {
            "algorithm": self.cfg.algorithm,
            "seed": self.cfg.seed,
            "iteration": self.iteration,
            "ppo_updates": self.ppo_updates,
            "env_steps": self.env_steps,
        }
        save_checkpoint(os.path.join(self.out_dir, f"{tag}.policy.bin"), self.params, meta)
        if self.cfg.uses_buffer:
            atomic_write_json(
                os.path.join(self.out_dir, f"{tag}.buffer.json"),
                level_buffer.buffer_to_dict(self.entries),
            )

    def _audit(self):
        if len(self.entries) > self.bcfg.capacity:
            raise RuntimeError("buffer exceeded capacity")
        if len(self.window) > self.cfg.window_levels:
            raise RuntimeError("feature window exceeded its level bound")
        for e in self.entries:
            if not (np.isfinite(e.regret_score) and np.isfinite(e.novelty_score)):
                raise RuntimeError("non-finite buffer score")

    # ------------------------------------------------------------- driving

    def final_evaluation(self):
        eval_rng = np.random.default_rng(derive_seed(self.cfg.seed, _STREAM_EVAL, 1 << 20))
        return evaluation.solved_rate(
            self.params, self.suite, self.cfg.eval_episodes, eval_rng, self.cfg.h_max
        )

    def run(self, max_iterations: int = None, on_iteration=None):
        """Drive to the update budget (or ``max_iterations``). Artifacts:
        manifest (at construction), metrics.csv per eval interval,
        provenance.jsonl, final checkpoint + buffer, eval.csv + summary."""
        started = time.time()
        if self.cfg.uses_buffer and not self.entries:
            self._seed_buffer()
        while self.ppo_updates < self.cfg.total_ppo_updates:
            if max_iterations is not None and self.iteration >= max_iterations:
                break
            self.iteration += 1
            if not self.cfg.uses_buffer:
                self._dr_iteration()
            else:
                u = float(self.decision_rng.random())
                if u < self.bcfg.replay_rate and self.entries:
                    self._replay_branch()
                else:
                    self._explore_branch()
            if self.cfg.eval_interval and self.iteration % self.cfg.eval_interval == 0:
                self._metrics_row()
            if self.cfg.checkpoint_every and self.iteration % self.cfg.checkpoint_every == 0:
                self._checkpoint(f"checkpoint-{self.iteration:06d}")
            if self.cfg.debug_checks:
                self._audit()
            if on_iteration is not None:
                on_iteration(self)
        if self.out_dir:
            self._checkpoint()
            self._flush_metrics()
            self._flush_provenance()
            records = self.final_evaluation()
            self._write_eval(records)
            summary = {
                "algorithm": self.cfg.algorithm,
                "seed": self.cfg.seed,
                "iterations": self.iteration,
                "ppo_updates": self.ppo_updates,
                "env_steps": self.env_steps,
                "coverage_fraction": self.coverage_fraction(),
                "wall_time_s": time.time() - started,
                "iqm_solved": evaluation.iqm([r.solved_rate for r in records])
                if len(records) >= 1 else 0.0,
                "optimality_gap": evaluation.optimality_gap(
                    [r.solved_rate for r in records]
                ),
                "mean_solved": float(np.mean([r.solved_rate for r in records])),
            }
            atomic_write_json(os.path.join(self.out_dir, "summary.json"), summary)
        return self

    def _write_eval(self, records):
        lines = ["level_name,level_id,episodes,solved_rate,mean_return"]
        for r in records:
            lines.append(
                f"{r.level_name},{r.level_id},{r.episodes},"
                f"{fmt_float(r.solved_rate)},{fmt_float(r.mean_return)}"
            )
        atomic_write_text(os.path.join(self.out_dir, "eval.csv"), "\n".join(lines) + "\n")


def run_dr(config: RunConfig, out_dir: str = None) -> UedRun:
    return UedRun(replace(config, algorithm="dr"), out_dir).run()


def run_plr(config: RunConfig, out_dir: str = None) -> UedRun:
    return UedRun(replace(config, algorithm="plr"), out_dir).run()


def run_plr_cenie(config: RunConfig, out_dir: str = None) -> UedRun:
    return UedRun(replace(config, algorithm="plr-cenie"), out_dir).run()


def run_accel(config: RunConfig, out_dir: str = None) -> UedRun:
    return UedRun(replace(config, algorithm="accel"), out_dir).run()


def run_accel_cenie(config: RunConfig, out_dir: str = None) -> UedRun:
    return UedRun(replace(config, algorithm="accel-cenie"), out_dir).run()


def load_manifest(path: str) -> RunConfig:
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "cenie-lab-run":
        raise RunConfigError(f"{path} is not a run manifest")
    return RunConfig.from_dict(manifest["config"])
