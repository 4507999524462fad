"""Tests for the training loop and its output files."""
import csv

import numpy as np
import pytest

from partequiv.models import build_network
from partequiv.services.checkpoint_service import read_checkpoint
from partequiv.services.dataset_service import LabeledImageSet
from partequiv.services.training_service import (
    DISTRIBUTION_HEADER, METRICS_HEADER, TrainingService, accuracy, build_optimizer, run_rngs, run_training,
)
from partequiv.utils.error_handling import TrainingError
from tests.factories import RunConfigFactory


def read_rows(path):
    with open(path, newline='') as handle:
        return list(csv.reader(handle))


class TestHelpers:
    """Test small training helpers."""

    def test_accuracy(self):
        """Test accuracy counts argmax hits."""
        logits = np.array([[2.0, 1.0], [0.0, 3.0], [1.0, 0.0]])
        assert accuracy(logits, np.array([0, 1, 1])) == pytest.approx(2 / 3)

    def test_run_rngs_are_independent(self):
        """Test the three streams differ but are reproducible."""
        first = [g.random() for g in run_rngs(5)]
        assert len(set(first)) == 3
        assert first == [g.random() for g in run_rngs(5)]

    def test_optimizer_groups(self, rng):
        """Test distribution parameters get their own learning rate."""
        cfg = RunConfigFactory(learnable=True, lr_main=1e-3, lr_dist=1e-4)
        optimizer = build_optimizer(build_network(cfg.network_config(), rng), cfg)
        assert [(g.name, g.lr) for g in optimizer.groups] == [('main', 1e-3), ('dist', 1e-4)]

    def test_frozen_model_has_one_group(self, rng):
        """Test frozen networks only optimise kernels, norms and head."""
        cfg = RunConfigFactory()
        optimizer = build_optimizer(build_network(cfg.network_config(), rng), cfg)
        assert [g.name for g in optimizer.groups] == ['main']


class TestTrainEpoch:
    """Test a single epoch."""

    def test_non_finite_loss(self, rng):
        """Test NaN inputs abort with the epoch, step and first non-finite tensor."""
        cfg = RunConfigFactory()
        model = build_network(cfg.network_config(), rng)
        data = LabeledImageSet(np.full((4, 1, 28, 28), np.nan), np.array([0, 1, 0, 1]), 2)
        with pytest.raises(TrainingError, match='non-finite loss at epoch 2, step 1; .*activation lifting'):
            TrainingService.train_epoch(model, build_optimizer(model, cfg), data, cfg, rng, 2, 0, 0, 10)
        assert model.activations == [] and not model.record_activations

    def test_theta_stays_in_range(self, rng):
        """Test distribution parameters are clamped after each step."""
        cfg = RunConfigFactory(learnable=True, lr_dist=10.0)
        model = build_network(cfg.network_config(), rng)
        data = LabeledImageSet(np.random.default_rng(3).random((8, 1, 28, 28)), np.arange(8) % 2, 2)
        TrainingService.train_epoch(model, build_optimizer(model, cfg), data, cfg, rng, 1, 0, 0, 10)
        for _, p in model.distribution_parameters():
            assert 1e-3 <= p.data[0] <= np.pi


class TestRunTraining:
    """Test whole runs on procedural data."""

    def test_output_files(self, tmp_path):
        """Test metrics, distribution trajectories and checkpoint are written."""
        cfg = RunConfigFactory(learnable=True, epochs=2, out_dir=str(tmp_path / 'run'))
        record = run_training(cfg)
        metrics = read_rows(record.metrics_path)
        assert tuple(metrics[0]) == METRICS_HEADER
        assert [(row[0], row[1]) for row in metrics[1:]] == [('1', 'train'), ('1', 'test'), ('2', 'train'), ('2', 'test')]
        dists = read_rows(record.distributions_path)
        assert tuple(dists[0]) == DISTRIBUTION_HEADER
        assert {row[1] for row in dists[1:]} == {'lifting', 'block0.conv1', 'block0.conv2'}
        assert {row[2] for row in dists[1:]} == {'theta_max', 'n_eff'}
        assert read_checkpoint(record.checkpoint).epoch == 2
        assert len(record.epochs) == 2 and 0.0 <= record.final_test_accuracy <= 1.0

    def test_deterministic(self, tmp_path):
        """Test equal seeds give byte-identical metrics."""
        first = run_training(RunConfigFactory(out_dir=str(tmp_path / 'a')))
        second = run_training(RunConfigFactory(out_dir=str(tmp_path / 'b')))
        assert first.metrics_path.read_bytes() == second.metrics_path.read_bytes()

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        """Test stopping after one epoch and resuming reproduces a two-epoch run."""
        straight = run_training(RunConfigFactory(learnable=True, epochs=2, out_dir=str(tmp_path / 'a')))
        cfg = RunConfigFactory(learnable=True, epochs=2, out_dir=str(tmp_path / 'b'))
        halfway = run_training(cfg, max_epochs=1)
        resumed = run_training(cfg, resume=halfway.checkpoint)
        assert [r.epoch for r in resumed.epochs] == [2]
        assert resumed.metrics_path.read_bytes() == straight.metrics_path.read_bytes()
        assert resumed.distributions_path.read_bytes() == straight.distributions_path.read_bytes()
