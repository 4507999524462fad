"""Tests for checkpoint writing and restoring."""
import numpy as np
import pytest

from partequiv.models import build_network
from partequiv.services.checkpoint_service import (
    MAGIC, CheckpointData, CheckpointService, model_arrays, read_checkpoint, write_checkpoint,
)
from partequiv.services.training_service import build_optimizer
from partequiv.utils.error_handling import CheckpointError
from tests.conftest import disk_image
from tests.factories import RunConfigFactory


@pytest.fixture
def saved(tmp_path, rng):
    """A learnable model saved with optimiser and RNG state."""
    cfg = RunConfigFactory(learnable=True, out_dir=str(tmp_path))
    model = build_network(cfg.network_config(), np.random.default_rng(7))
    optimizer = build_optimizer(model, cfg)
    path = tmp_path / 'checkpoint.bin'
    CheckpointService.save(path, model, cfg, optimizer, epoch=3, rng=rng)
    return path, cfg, model, optimizer


class TestFormat:
    """Test the binary container."""

    def test_header(self, saved):
        """Test files start with the magic string."""
        path, *_ = saved
        assert path.read_bytes().startswith(MAGIC)

    def test_round_trip(self, saved):
        """Test metadata and arrays survive a write and read."""
        path, cfg, model, optimizer = saved
        data = read_checkpoint(path)
        assert data.epoch == 3 and data.run_config == cfg
        for name, array in model_arrays(model).items():
            assert np.array_equal(data.arrays[name], array)
        assert set(optimizer.state_arrays()) <= set(data.arrays)

    def test_no_temporary_file_left(self, saved):
        """Test the write goes through a renamed temporary file."""
        path, *_ = saved
        assert [p.name for p in path.parent.iterdir() if p.suffix == '.tmp'] == []

    def test_bad_magic(self, tmp_path):
        """Test foreign files are rejected."""
        path = tmp_path / 'other.bin'
        path.write_bytes(b'NOTACKPT' + b'\x00' * 16)
        with pytest.raises(CheckpointError, match='not a partequiv checkpoint'):
            read_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        """Test other format versions are rejected with both numbers."""
        path = tmp_path / 'old.bin'
        write_checkpoint(path, CheckpointData(RunConfigFactory().to_dict(), version=1))
        with pytest.raises(CheckpointError, match='format version 1'):
            read_checkpoint(path)

    def test_truncated(self, saved, tmp_path):
        """Test a cut-off file is reported as truncated."""
        path, *_ = saved
        short = tmp_path / 'short.bin'
        short.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError, match='truncated'):
            read_checkpoint(short)

    def test_missing_file(self, tmp_path):
        """Test missing files raise."""
        with pytest.raises(CheckpointError, match='not found'):
            read_checkpoint(tmp_path / 'absent.bin')


class TestCheckpointService:
    """Test model, optimiser and RNG restoration."""

    def test_forward_is_identical_after_load(self, saved, rng):
        """Test a restored model computes bit-identical logits in eval mode."""
        path, _, model, _ = saved
        restored, data = CheckpointService.load(path)
        images = np.stack([disk_image(rng, 28, 12) for _ in range(2)])
        assert np.array_equal(restored.eval()(images).data, model.eval()(images).data)

    def test_rng_state_is_restored(self, saved):
        """Test the training RNG continues where it was saved."""
        path, *_ = saved
        reference = np.random.default_rng(1234)
        _, data = CheckpointService.load(path)
        resumed = np.random.default_rng(99)
        CheckpointService.restore_rng(resumed, data)
        assert resumed.random() == reference.random()

    def test_config_mismatch_names_field(self, saved):
        """Test loading against a different architecture names the differing field."""
        path, cfg, *_ = saved
        with pytest.raises(CheckpointError, match="'channels'"):
            CheckpointService.load(path, expected=cfg.replace(channels=5))

    def test_matching_config_loads(self, saved):
        """Test non-architecture fields may differ."""
        path, cfg, *_ = saved
        model, data = CheckpointService.load(path, expected=cfg.replace(epochs=9, lr_main=0.5))
        assert data.epoch == 3 and model.distribution_parameters()

    def test_optimizer_state_is_restored(self, saved):
        """Test Adam moments and step counters come back."""
        path, cfg, model, optimizer = saved
        for state in optimizer.state.values():
            state.m[...] = 0.25
            state.step = 4
        CheckpointService.save(path, model, cfg, optimizer)
        fresh = build_optimizer(model, cfg)
        CheckpointService.restore_optimizer(fresh, read_checkpoint(path))
        assert all(np.all(s.m == 0.25) and s.step == 4 for s in fresh.state.values())

    def test_missing_entry(self, saved):
        """Test restoring into a model with extra parameters fails by name."""
        path, cfg, *_ = saved
        data = read_checkpoint(path)
        del data.arrays['param.lifting.dist.theta']
        model = build_network(cfg.network_config(), np.random.default_rng(0))
        with pytest.raises(CheckpointError, match='lifting.dist.theta'):
            CheckpointService.restore_model(model, data)

    def test_shape_mismatch(self, saved):
        """Test entries of the wrong shape are rejected."""
        path, cfg, *_ = saved
        data = read_checkpoint(path)
        data.arrays['param.lifting.dist.theta'] = np.zeros(2, dtype=np.float32)
        model = build_network(cfg.network_config(), np.random.default_rng(0))
        with pytest.raises(CheckpointError, match='has shape'):
            CheckpointService.restore_model(model, data)
