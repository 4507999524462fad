"""Tests for IDX ingestion and task construction."""
import gzip
import logging
import struct

import numpy as np
import pytest

from partequiv.constants import TaskName
from partequiv.groups import FiberElement
from partequiv.services.dataset_service import (
    IMAGE_MAGIC, DatasetService, LabeledImageSet, ToyTaskSpec, find_mnist, load_labeled_set, make_rotmnist,
    make_toy_task, procedural_fallback, procedural_glyphs, read_idx, write_idx,
)
from partequiv.utils.error_handling import DatasetError
from partequiv.utils.image_ops import mirror, rotate180, transform_image
from tests.conftest import disk_image, random_digits


class TestReadIdx:
    """Test the IDX reader and writer."""

    def test_image_layout_and_scaling(self, tmp_path):
        """Test images are N x 1 x rows x cols float32 in [0, 1]."""
        path = tmp_path / 'images'
        payload = bytes(range(6))
        path.write_bytes(struct.pack('>IIII', IMAGE_MAGIC, 1, 2, 3) + payload)
        images = read_idx(path)
        assert images.shape == (1, 1, 2, 3) and images.dtype == np.float32
        assert np.allclose(images[0, 0], np.arange(6).reshape(2, 3) / 255.0)

    def test_labels(self, tmp_path):
        """Test label files give int64 vectors."""
        path = tmp_path / 'labels'
        write_idx(path, np.array([3, 1, 4]))
        labels = read_idx(path)
        assert labels.dtype == np.int64 and list(labels) == [3, 1, 4]

    def test_rewrite_is_byte_exact(self, tmp_path, rng):
        """Test reading and writing again reproduces the file byte for byte."""
        first, second = tmp_path / 'a', tmp_path / 'b'
        write_idx(first, random_digits(rng, 3))
        write_idx(second, read_idx(first))
        assert first.read_bytes() == second.read_bytes()

    def test_gzip(self, tmp_path, rng):
        """Test .gz files are compressed deterministically and read transparently."""
        images = random_digits(rng, 2)
        write_idx(tmp_path / 'a.gz', images)
        write_idx(tmp_path / 'b.gz', images)
        assert (tmp_path / 'a.gz').read_bytes() == (tmp_path / 'b.gz').read_bytes()
        assert gzip.decompress((tmp_path / 'a.gz').read_bytes())[:4] == struct.pack('>I', IMAGE_MAGIC)
        assert np.allclose(read_idx(tmp_path / 'a.gz'), images, atol=1e-7)

    def test_wrong_magic(self, tmp_path):
        """Test files with an unknown magic number are rejected."""
        path = tmp_path / 'bogus'
        path.write_bytes(struct.pack('>II', 0x12345678, 0))
        with pytest.raises(DatasetError, match='not an IDX file'):
            read_idx(path)

    def test_truncated_payload(self, tmp_path):
        """Test payloads shorter than the header promises are rejected."""
        path = tmp_path / 'short'
        path.write_bytes(struct.pack('>IIII', IMAGE_MAGIC, 5, 28, 28) + b'\x00' * 100)
        with pytest.raises(DatasetError, match='unexpected EOF'):
            read_idx(path)

    def test_truncated_header(self, tmp_path):
        """Test files shorter than the magic number are rejected."""
        path = tmp_path / 'tiny'
        path.write_bytes(b'\x00\x00')
        with pytest.raises(DatasetError, match='unexpected EOF'):
            read_idx(path)


class TestLabeledImageSet:
    """Test the in-memory dataset."""

    def test_count_mismatch(self):
        """Test images and labels must pair up."""
        with pytest.raises(DatasetError, match='count mismatch'):
            LabeledImageSet(np.zeros((2, 1, 4, 4)), np.zeros(3), 2)

    def test_label_range(self):
        """Test labels must lie below num_classes."""
        with pytest.raises(DatasetError):
            LabeledImageSet(np.zeros((1, 1, 4, 4)), np.array([2]), 2)

    def test_batches_cover_everything(self, rng):
        """Test shuffled batches visit every example once."""
        data = LabeledImageSet(np.zeros((7, 1, 2, 2)), np.arange(7) % 2, 2)
        sizes = [len(labels) for _, labels in data.batches(3, rng)]
        assert sizes == [3, 3, 1]

    def test_subsample(self, rng):
        """Test subsampling keeps the requested size and passes larger sizes through."""
        data = LabeledImageSet(np.zeros((7, 1, 2, 2)), np.zeros(7), 2)
        assert len(data.subsample(4, rng)) == 4
        assert data.subsample(None, rng) is data

    def test_load_pair(self, idx_dir):
        """Test image and label files load together."""
        data = load_labeled_set(*find_mnist(idx_dir, 'train'))
        assert len(data) == 40 and data.num_classes == 10


class TestFindMnist:
    """Test dataset discovery."""

    def test_plain_files(self, idx_dir):
        """Test uncompressed files are found."""
        images, labels = find_mnist(idx_dir, 'test')
        assert images.name == 't10k-images-idx3-ubyte'

    def test_gzipped_files(self, tmp_path, rng):
        """Test gzipped files are found."""
        write_idx(tmp_path / 'train-images-idx3-ubyte.gz', random_digits(rng, 2))
        write_idx(tmp_path / 'train-labels-idx1-ubyte.gz', np.array([6, 6]))
        images, _ = find_mnist(tmp_path, 'train')
        assert images.suffix == '.gz'

    def test_missing(self, tmp_path):
        """Test absent files give None."""
        assert find_mnist(tmp_path, 'train') is None
        assert find_mnist(None, 'train') is None


class TestToyTasks:
    """Test MNIST6-180 and MNIST6-M construction."""

    @pytest.mark.parametrize('task,transform', [(TaskName.MNIST6_180, rotate180), (TaskName.MNIST6_M, mirror)])
    def test_transformed_half(self, idx_dir, rng, task, transform):
        """Test half of the sixes are transformed, labelled 1 and split 90/10 per class."""
        mnist = load_labeled_set(*find_mnist(idx_dir, 'train'))
        sixes = mnist.images[mnist.labels == 6]
        train, test = make_toy_task(mnist, ToyTaskSpec.for_task(task), rng)
        assert (len(train), len(test)) == (18, 2)
        assert np.bincount(train.labels).tolist() == [9, 9]
        moved = transform(sixes)
        for image in train.images[train.labels == 1]:
            assert any(np.array_equal(image, m) for m in moved)

    def test_no_source_digits(self, rng):
        """Test a dataset without sixes is rejected."""
        mnist = LabeledImageSet(np.zeros((2, 1, 4, 4)), np.array([1, 2]), 10)
        with pytest.raises(DatasetError, match='no images with label 6'):
            make_toy_task(mnist, ToyTaskSpec(), rng)

    def test_unknown_transform(self):
        """Test unknown toy transforms are rejected."""
        with pytest.raises(DatasetError):
            ToyTaskSpec('shear').apply(np.zeros((1, 1, 4, 4)))

    def test_mirror_task_uses_fiber_mirror(self, rng):
        """Test the mirror task applies the same reflection as the network's mirror element."""
        images = random_digits(rng, 3)
        flipped = ToyTaskSpec.for_task(TaskName.MNIST6_M).apply(images)
        assert np.array_equal(flipped, transform_image(images, FiberElement(0.0, -1)))
        assert not np.array_equal(flipped, np.flip(images, axis=-1))


class TestGeneratedData:
    """Test rotated and procedural datasets."""

    def test_rotmnist_half_turn_is_exact(self, rng):
        """Test a rotation by pi reverses both image axes."""
        mnist = LabeledImageSet(random_digits(rng, 2), np.array([3, 4]), 10)
        rotated = make_rotmnist(mnist, rng, angles=np.array([np.pi, 0.0]))
        assert np.array_equal(rotated.images[0], rotate180(mnist.images[0]))
        assert np.array_equal(rotated.images[1], mnist.images[1])
        assert list(rotated.labels) == [3, 4]

    def test_rotmnist_random_angles_stay_in_range(self, rng):
        """Test interpolated rotations keep pixel values in [0, 1]."""
        mnist = LabeledImageSet(random_digits(rng, 3), np.array([0, 1, 2]), 10)
        rotated = make_rotmnist(mnist, rng)
        assert rotated.images.min() >= 0.0 and rotated.images.max() <= 1.0

    def test_rotmnist_preserves_mean_intensity(self, rng):
        """Test rotating disk-centred digits keeps the mean intensity within 2%."""
        images = np.stack([np.abs(disk_image(rng, 28, 10.0)) for _ in range(50)])
        images /= images.max()
        mnist = LabeledImageSet(images, np.zeros(50, dtype=np.int64), 10)
        rotated = make_rotmnist(mnist, rng)
        assert rotated.images.mean() == pytest.approx(mnist.images.mean(), rel=0.02)

    @pytest.mark.parametrize('transform', ['rotate180', 'mirror'])
    def test_procedural_fallback(self, rng, transform):
        """Test labels alternate and images are valid 28 x 28 glyphs."""
        data = procedural_fallback(6, rng, transform)
        assert data.images.shape == (6, 1, 28, 28)
        assert list(data.labels) == [0, 1, 0, 1, 0, 1]
        assert data.images.max() <= 1.0 and data.images.max() > 0.5

    def test_procedural_fallback_size(self, rng):
        """Test at least one image per class is required."""
        with pytest.raises(DatasetError, match='n >= 2'):
            procedural_fallback(1, rng)

    def test_procedural_glyphs(self, rng):
        """Test four classes cycle through the dataset."""
        data = procedural_glyphs(8, rng)
        assert data.num_classes == 4 and list(data.labels) == [0, 1, 2, 3, 0, 1, 2, 3]
        with pytest.raises(DatasetError):
            procedural_glyphs(3, rng)


class TestDatasetService:
    """Test task resolution."""

    def test_toy_task_from_files(self, idx_dir, rng):
        """Test MNIST6-180 is built from IDX files when present."""
        train, test = DatasetService.load_task(TaskName.MNIST6_180, idx_dir, rng)
        assert train.num_classes == 2 and len(train) + len(test) == 20

    def test_rotmnist_uses_test_files(self, idx_dir, rng):
        """Test rotated MNIST keeps the official test split."""
        train, test = DatasetService.load_task(TaskName.ROTMNIST, idx_dir, rng, train_size=16)
        assert (len(train), len(test)) == (16, 10)
        assert train.num_classes == 10

    def test_fallback_warns(self, tmp_path, rng, caplog):
        """Test missing files fall back to procedural data with a warning."""
        with caplog.at_level(logging.WARNING):
            train, test = DatasetService.load_task(TaskName.MNIST6_M, tmp_path, rng, train_size=12, test_size=4)
        assert (len(train), len(test)) == (12, 4)
        assert 'procedural' in caplog.text

    def test_missing_without_fallback(self, tmp_path, rng):
        """Test missing files raise when the fallback is disabled."""
        with pytest.raises(DatasetError, match='fallback is disabled'):
            DatasetService.load_task(TaskName.MNIST6_180, tmp_path, rng, allow_fallback=False)

    def test_procedural_task(self, rng):
        """Test the procedural task needs no files."""
        train, test = DatasetService.load_task(TaskName.PROCEDURAL, None, rng, train_size=8, test_size=4)
        assert (len(train), len(test)) == (8, 4)

    def test_unknown_task(self, rng):
        """Test unknown task names are rejected."""
        with pytest.raises(DatasetError, match='unknown task'):
            DatasetService.load_task('cifar', None, rng)
