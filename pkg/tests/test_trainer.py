import json

import numpy as np
import pytest

from planarmimic.config import default_config
from planarmimic.core import ReferenceDataset, save_reference_csv
from planarmimic.sim import generate_demo_set
from planarmimic.trainer import (Trainer, build_identifier, evaluate_policy,
                                 rollout_observations)


def tiny_config(task="leap", loss="wgan", seed=3, tmp_path=None):
    cfg = default_config(task, loss)
    cfg.seed = seed
    cfg.iterations = 4
    cfg.checkpoint_interval = 2
    cfg.ppo.num_envs = 4
    cfg.ppo.steps_per_iter = 6
    cfg.ppo.hidden_sizes = (16, 16)
    cfg.disc.hidden_sizes = (16, 8)
    cfg.disc.minibatches = 2
    cfg.disc.minibatch_size = 16
    cfg.eval.rollouts = 2
    if tmp_path is not None:
        refs = tmp_path / "refs"
        demos = generate_demo_set(task, cfg.sim, np.random.default_rng(0),
                                  n_trajectories=4)
        save_reference_csv(refs, demos, cfg.sim.control_dt)
        cfg.refs = str(refs)
    return cfg


def tiny_dataset(cfg, task="leap"):
    demos = generate_demo_set(task, cfg.sim, np.random.default_rng(0),
                              n_trajectories=4)
    return ReferenceDataset(trajectories=demos, motion_name=task,
                            dt=cfg.sim.control_dt)


class TestTrainingLoop:
    def test_metrics_record_fields(self):
        cfg = tiny_config()
        trainer = Trainer(cfg, tiny_dataset(cfg))
        rec = trainer.train_iteration()
        for key in ("iteration", "reward_mean", "imitation_mean",
                    "regularization_mean", "termination_rate", "disc_loss",
                    "kl", "lr", "episode_length_mean"):
            assert key in rec
        assert rec["iteration"] == 1

    def test_run_writes_artifacts(self, tmp_path):
        cfg = tiny_config(tmp_path=tmp_path)
        trainer = Trainer(cfg, tiny_dataset(cfg))
        final = trainer.run(tmp_path / "run")
        out = tmp_path / "run"
        assert (out / "config.txt").exists()
        assert (out / "run.json").exists()
        assert (out / "metrics.jsonl").exists()
        assert (out / "checkpoint_000002.json").exists()
        assert final.exists()
        lines = (out / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == cfg.iterations
        records = [json.loads(l) for l in lines]
        assert [r["iteration"] for r in records] == [1, 2, 3, 4]
        run_meta = json.loads((out / "run.json").read_text())
        assert run_meta["seed"] == cfg.seed
        assert run_meta["build"]

    def test_same_seed_identical_metrics(self):
        cfg_a = tiny_config(seed=11)
        cfg_b = tiny_config(seed=11)
        ta = Trainer(cfg_a, tiny_dataset(cfg_a))
        tb = Trainer(cfg_b, tiny_dataset(cfg_b))
        for _ in range(3):
            ra = ta.train_iteration()
            rb = tb.train_iteration()
            assert ra == rb

    def test_different_seeds_differ(self):
        cfg_a = tiny_config(seed=1)
        cfg_b = tiny_config(seed=2)
        ra = Trainer(cfg_a, tiny_dataset(cfg_a)).train_iteration()
        rb = Trainer(cfg_b, tiny_dataset(cfg_b)).train_iteration()
        assert ra["reward_mean"] != rb["reward_mean"]

    def test_lsgan_variant_runs(self):
        cfg = tiny_config(loss="lsgan")
        trainer = Trainer(cfg, tiny_dataset(cfg))
        rec = trainer.train_iteration()
        assert np.isfinite(rec["disc_loss"])


class TestCheckpointResume:
    def test_resume_is_bit_exact(self, tmp_path):
        cfg = tiny_config(tmp_path=tmp_path, seed=21)
        cfg.iterations = 6
        cfg.checkpoint_interval = 3

        # uninterrupted run
        solid = Trainer(cfg, tiny_dataset(cfg))
        records_solid = [solid.train_iteration() for _ in range(6)]

        # interrupted at 3, resumed from checkpoint
        part = Trainer(tiny_config(tmp_path=tmp_path, seed=21), tiny_dataset(cfg))
        for _ in range(3):
            part.train_iteration()
        ckpt = part.save_checkpoint(tmp_path / "ckpt.json")
        resumed = Trainer.from_checkpoint(ckpt)
        records_resumed = [resumed.train_iteration() for _ in range(3)]

        assert records_resumed == records_solid[3:]

    def test_checkpoint_preserves_parameters(self, tmp_path):
        cfg = tiny_config(tmp_path=tmp_path)
        trainer = Trainer(cfg, tiny_dataset(cfg))
        trainer.train_iteration()
        path = trainer.save_checkpoint(tmp_path / "c.json")
        restored = Trainer.from_checkpoint(path)
        assert np.array_equal(restored.policy.net.params_flat(),
                              trainer.policy.net.params_flat())
        assert np.array_equal(restored.disc.params_flat(),
                              trainer.disc.params_flat())
        assert restored.stats.count == trainer.stats.count
        assert restored.iteration == trainer.iteration

    def test_checkpoint_format_versioned(self, tmp_path):
        cfg = tiny_config(tmp_path=tmp_path)
        trainer = Trainer(cfg, tiny_dataset(cfg))
        path = trainer.save_checkpoint(tmp_path / "c.json")
        blob = json.loads(path.read_text())
        assert blob["format_version"] == 1
        blob["format_version"] = 999
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(blob))
        with pytest.raises(ValueError, match="format"):
            Trainer.from_checkpoint(bad)


class TestEvaluation:
    def test_fresh_policy_close_to_stand_still(self):
        # a just-initialized policy barely moves: its warping distance should
        # sit within 2x of the motionless baseline
        cfg = tiny_config()
        cfg.eval.rollouts = 3
        trainer = Trainer(cfg, tiny_dataset(cfg))
        report = evaluate_policy(cfg, trainer.policy, trainer.dataset)
        assert report.dtw.mean <= 2.0 * report.stand_still.mean
        assert report.dtw.mean >= 0.5 * report.stand_still.mean

    def test_report_matrix_shape(self):
        cfg = tiny_config()
        cfg.eval.rollouts = 3
        trainer = Trainer(cfg, tiny_dataset(cfg))
        report = evaluate_policy(cfg, trainer.policy, trainer.dataset)
        assert report.dtw.distances.shape == (3, 4)
        assert report.n_rollouts == 3
        assert report.n_references == 4

    def test_handcrafted_reported_for_backflip(self):
        cfg = tiny_config(task="backflip")
        cfg.eval.rollouts = 2
        trainer = Trainer(cfg, tiny_dataset(cfg, task="backflip"))
        report = evaluate_policy(cfg, trainer.policy, trainer.dataset)
        assert report.handcrafted is not None
        assert report.handcrafted.kind == "backflip"
        assert len(report.handcrafted.per_rollout) == 2

    def test_no_handcrafted_for_leap(self):
        cfg = tiny_config(task="leap")
        trainer = Trainer(cfg, tiny_dataset(cfg))
        report = evaluate_policy(cfg, trainer.policy, trainer.dataset)
        assert report.handcrafted is None

    def test_rollout_observations_shape_and_determinism(self):
        cfg = tiny_config()
        trainer = Trainer(cfg, tiny_dataset(cfg))
        a, _ = rollout_observations(cfg, trainer.policy, 50, seed=4)
        b, _ = rollout_observations(cfg, trainer.policy, 50, seed=4)
        assert a.shape == (50, 6)
        assert np.array_equal(a, b)

    def test_build_identifier_nonempty(self):
        assert build_identifier()
