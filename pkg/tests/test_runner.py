"""Curriculum loop behavior: branch accounting, stream isolation,
reproducibility, provenance, and the editor's complexity drift."""

import json
import os

import numpy as np
import pytest

from cenie_lab.maze_env import level_from_json, shortest_path_length
from cenie_lab.runner import RunConfig, RunConfigError, UedRun, load_manifest
from cenie_lab.student import PpoConfig, param_hash

FAST_PPO = PpoConfig(rollout_length=16, workers=1, epochs=2)


def fast_config(algorithm, seed=0, **kw):
    base = dict(
        algorithm=algorithm,
        seed=seed,
        total_ppo_updates=10**9,
        eval_interval=0,
        buffer_capacity=8,
        window_levels=8,
        refit_every=4,
        k_min=2,
        k_max=3,
        gmm_max_iterations=10,
        ppo=FAST_PPO,
    )
    base.update(kw)
    return RunConfig(**base)


# -------------------------------------------------------------- validation


def test_config_validation():
    with pytest.raises(RunConfigError):
        RunConfig(algorithm="greedy")
    with pytest.raises(RunConfigError):
        RunConfig(scoring="entropy")
    with pytest.raises(RunConfigError):
        RunConfig(replay_rate=1.5)
    with pytest.raises(RunConfigError):
        RunConfig.from_dict({"algorithm": "dr", "mystery": 1})
    with pytest.raises(RunConfigError):
        RunConfig.from_dict({"ppo": {"mystery": 1}})


def test_replay_rate_defaults_by_family():
    assert RunConfig(algorithm="plr").resolved_replay_rate == 0.5
    assert RunConfig(algorithm="plr-cenie").resolved_replay_rate == 0.5
    assert RunConfig(algorithm="accel").resolved_replay_rate == 0.8
    assert RunConfig(algorithm="accel-cenie").resolved_replay_rate == 0.8
    assert RunConfig(algorithm="accel", replay_rate=0.3).resolved_replay_rate == 0.3


def test_plain_variants_force_alpha_zero():
    assert RunConfig(algorithm="plr", alpha=0.7).buffer_config().alpha == 0.0
    assert RunConfig(algorithm="plr-cenie", alpha=0.7).buffer_config().alpha == 0.7


def test_config_round_trip():
    cfg = fast_config("accel-cenie", seed=3, alpha=0.25)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


# -------------------------------------------------------------- accounting


def test_dr_updates_every_iteration():
    run = UedRun(fast_config("dr")).run(max_iterations=20)
    assert run.iteration == 20
    assert run.ppo_updates == 20
    assert run.env_steps == 20 * 16
    assert len(run.entries) == 0 and run.refits == 0


def test_replay_branch_frequency_tracks_rate():
    run = UedRun(fast_config("plr", seed=1)).run(max_iterations=2000)
    assert run.explore_count + run.replay_count == run.iteration == 2000
    assert run.ppo_updates == run.replay_count
    frac = run.replay_count / run.iteration
    assert abs(frac - 0.5) < 0.04


def test_env_steps_account_for_every_rollout():
    run = UedRun(fast_config("plr", seed=2)).run(max_iterations=50)
    per = 16  # rollout_length x workers
    # Seeding: one stop-gradient rollout per slot. Explore: one. Replay: the
    # training rollout plus the fresh scoring rollout.
    want = (8 + run.explore_count + 2 * run.replay_count) * per
    assert run.env_steps == want


def test_accel_env_steps_include_edited_children():
    run = UedRun(fast_config("accel", seed=3)).run(max_iterations=50)
    per = 16
    want = (8 + run.explore_count + 2 * run.replay_count) * per
    assert run.env_steps == want


def test_ppo_update_budget_stops_run():
    run = UedRun(fast_config("plr", seed=4, total_ppo_updates=5)).run()
    assert run.ppo_updates == 5


def test_scoring_rollouts_never_touch_coverage():
    run = UedRun(fast_config("plr", seed=5)).run(max_iterations=0)
    assert run.env_steps == 8 * 16        # the seeded buffer cost rollouts
    assert run.visited == set()           # but none of them count as training
    assert run.coverage_fraction() == 0.0


def test_refit_cadence():
    run = UedRun(fast_config("plr-cenie", seed=6)).run(max_iterations=60)
    assert run.refits == 1 + run.replay_count // 4
    assert run.model is not None
    disabled = UedRun(fast_config("plr-cenie", seed=6, refit_every=0)).run(max_iterations=30)
    assert disabled.refits == 0 and disabled.model is None


def test_debug_checks_audit_passes():
    run = UedRun(fast_config("accel-cenie", seed=7, debug_checks=True)).run(max_iterations=40)
    assert run.iteration == 40


# ------------------------------------------------------------ reproducibility


def test_same_seed_bit_identical():
    a = UedRun(fast_config("plr-cenie", seed=8)).run(max_iterations=40)
    b = UedRun(fast_config("plr-cenie", seed=8)).run(max_iterations=40)
    assert param_hash(a.params) == param_hash(b.params)
    assert a.buffer_fingerprint() == b.buffer_fingerprint()
    assert a.env_steps == b.env_steps


def test_different_seeds_diverge():
    a = UedRun(fast_config("plr-cenie", seed=9)).run(max_iterations=20)
    b = UedRun(fast_config("plr-cenie", seed=10)).run(max_iterations=20)
    assert param_hash(a.params) != param_hash(b.params)


def test_reduction_parity_short_horizon():
    plain = UedRun(fast_config("plr", seed=11, refit_every=0))
    reduced = UedRun(fast_config("plr-cenie", seed=11, alpha=0.0, refit_every=0))
    snaps = {"plain": [], "reduced": []}
    plain.run(max_iterations=40,
              on_iteration=lambda r: snaps["plain"].append(r.buffer_fingerprint()))
    reduced.run(max_iterations=40,
                on_iteration=lambda r: snaps["reduced"].append(r.buffer_fingerprint()))
    assert snaps["plain"] == snaps["reduced"]
    assert param_hash(plain.params) == param_hash(reduced.params)


# ----------------------------------------------------------------- artifacts


def test_artifacts_and_manifest_round_trip(tmp_path):
    out = str(tmp_path / "run")
    cfg = fast_config("plr-cenie", seed=12, total_ppo_updates=4,
                      eval_interval=5, metric_eval_episodes=2, eval_episodes=2)
    UedRun(cfg, out).run()
    names = set(os.listdir(out))
    assert {"run-manifest.json", "metrics.csv", "eval.csv", "provenance.jsonl",
            "summary.json", "checkpoint.policy.bin", "checkpoint.buffer.json"} <= names
    assert load_manifest(os.path.join(out, "run-manifest.json")) == cfg
    with open(os.path.join(out, "metrics.csv")) as fh:
        header = fh.readline().strip().split(",")
    assert "coverage_fraction" in header
    assert any(col.startswith("solved_") for col in header)
    with open(os.path.join(out, "summary.json")) as fh:
        summary = json.load(fh)
    assert summary["algorithm"] == "plr-cenie"
    assert 0.0 <= summary["coverage_fraction"] <= 1.0


def test_provenance_events(tmp_path):
    out = str(tmp_path / "run")
    cfg = fast_config("accel", seed=13, total_ppo_updates=10)
    UedRun(cfg, out).run()
    events = []
    with open(os.path.join(out, "provenance.jsonl")) as fh:
        for line in fh:
            events.append(json.loads(line))
    kinds = {e["event"] for e in events}
    assert "insert" in kinds and "replay" in kinds
    edited = [e for e in events if e["parent_id"]]
    assert edited, "edited children must record their parent level"
    for e in edited:
        assert e["event"] in ("insert", "reject")
        assert e["regret"] is not None


def test_plr_rescore_events_have_no_parents(tmp_path):
    out = str(tmp_path / "run")
    UedRun(fast_config("plr", seed=14, total_ppo_updates=10), out).run()
    with open(os.path.join(out, "provenance.jsonl")) as fh:
        events = [json.loads(line) for line in fh]
    assert all(e["parent_id"] is None for e in events)
    assert any(e["event"] == "rescore" for e in events)


def test_buffer_checkpoint_reloads(tmp_path):
    out = str(tmp_path / "run")
    run = UedRun(fast_config("plr", seed=15, total_ppo_updates=6), out).run()
    with open(os.path.join(out, "checkpoint.buffer.json")) as fh:
        blob = json.load(fh)
    assert len(blob["entries"]) == len(run.entries)
    level = level_from_json(blob["entries"][0]["level"])
    assert level.width == 9


# ------------------------------------------------------------------- editor


def test_editor_raises_complexity_over_thirds():
    """Seeded from near-empty rooms, the edit-and-curate loop should grow
    structural complexity: mean shortest path over buffered solvable levels
    must not shrink from the first third to the last, for most seeds."""
    wins = 0
    for seed in (0, 1, 2):
        cfg = fast_config("accel", seed=seed, buffer_capacity=16,
                          accel_seed_wall_min=0, accel_seed_wall_max=2)
        run = UedRun(cfg)
        marks = []

        def snap(r, marks=marks):
            if r.iteration in (100, 200, 300):
                lengths = [
                    shortest_path_length(e.level)
                    for e in r.entries
                ]
                lengths = [d for d in lengths if d is not None]
                marks.append(float(np.mean(lengths)) if lengths else 0.0)

        run.run(max_iterations=300, on_iteration=snap)
        wins += marks[-1] >= marks[0]
    assert wins >= 2, f"complexity drifted down for most seeds"
