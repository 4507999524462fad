"""Dataset ingestion (IDX files) and construction of the training tasks."""
import gzip
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np

from partequiv.constants import TaskName
from partequiv.errors import get_error_message
from partequiv.groups import FiberElement
from partequiv.utils.error_handling import DatasetError, log_error_with_context
from partequiv.utils.image_ops import mirror, rotate180, transform_image

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
IMAGE_SIZE = 28
SOURCE_DIGIT = 6

MNIST_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}


@dataclass
class LabeledImageSet:
    """Images N x 1 x H x W in [0, 1] with integer labels in [0, num_classes)."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DatasetError(f"images must be N x C x H x W, got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DatasetError(get_error_message('COUNT_MISMATCH', images=len(self.images), labels=len(self.labels)))
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, indices) -> 'LabeledImageSet':
        indices = np.asarray(indices, dtype=np.intp)
        return LabeledImageSet(self.images[indices], self.labels[indices], self.num_classes)

    def subsample(self, size: Optional[int], rng: np.random.Generator) -> 'LabeledImageSet':
        if size is None or size >= len(self):
            return self
        return self.take(np.sort(rng.choice(len(self), size=size, replace=False)))

    def batches(self, batch_size: int, rng: Optional[np.random.Generator] = None
                ) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """Yield (images, labels) batches, shuffled when rng is given."""
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield self.images[idx], self.labels[idx]


@dataclass(frozen=True)
class ToyTaskSpec:
    """
    Two-class task: source digit images (label 0) against their transforms (label 1).

    The mirror task reflects with the fiber group's own Mir(-1) (see `mirror`),
    so a frozen mirror-group network sees both classes as one orbit.
    """

    transform: str = 'rotate180'
    source_digit: int = SOURCE_DIGIT
    train_fraction: float = 0.9

    def apply(self, images: np.ndarray) -> np.ndarray:
        if self.transform == 'rotate180':
            return rotate180(images)
        if self.transform == 'mirror':
            return mirror(images)
        raise DatasetError(f"unknown toy transform {self.transform!r}")

    @classmethod
    def for_task(cls, task: str) -> 'ToyTaskSpec':
        return cls('mirror' if task == TaskName.MNIST6_M else 'rotate180')


# *** IDX format ***
def _open(path: Path):
    path = Path(path)
    return gzip.open(path, 'rb') if path.suffix == '.gz' else open(path, 'rb')


def _read_exact(handle, n: int, path) -> bytes:
    data = handle.read(n)
    if len(data) != n:
        raise DatasetError(get_error_message('UNEXPECTED_EOF', path=path, expected=n, actual=len(data)))
    return data


def read_idx(path) -> np.ndarray:
    """
    Read an IDX image or label file, gzip-compressed or not.

    Image files give float32 N x 1 x rows x cols scaled to [0, 1]; label
    files give an int64 vector.

    Raises:
        DatasetError: On a wrong magic number or a truncated payload
    """
    with _open(path) as handle:
        (magic,) = struct.unpack('>I', _read_exact(handle, 4, path))
        if magic == IMAGE_MAGIC:
            n, rows, cols = struct.unpack('>III', _read_exact(handle, 12, path))
            payload = _read_exact(handle, n * rows * cols, path)
            pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, 1, rows, cols)
            return pixels.astype(np.float32) / 255.0
        if magic == LABEL_MAGIC:
            (n,) = struct.unpack('>I', _read_exact(handle, 4, path))
            return np.frombuffer(_read_exact(handle, n, path), dtype=np.uint8).astype(np.int64)
    raise DatasetError(get_error_message('NOT_IDX', path=path, magic=magic))


def write_idx(path, array: np.ndarray):
    """Write images (N x 1 x rows x cols in [0, 1]) or labels (N,) as IDX; `.gz` paths are gzipped."""
    array = np.asarray(array)
    if array.ndim == 1:
        header = struct.pack('>II', LABEL_MAGIC, len(array))
        payload = array.astype(np.uint8).tobytes()
    else:
        n, rows, cols = array.shape[0], array.shape[-2], array.shape[-1]
        header = struct.pack('>IIII', IMAGE_MAGIC, n, rows, cols)
        payload = np.clip(np.rint(array.reshape(n, rows, cols) * 255.0), 0, 255).astype(np.uint8).tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == '.gz':
        with gzip.GzipFile(path, 'wb', mtime=0) as handle:
            handle.write(header + payload)
    else:
        path.write_bytes(header + payload)


def load_labeled_set(images_path, labels_path, num_classes: int = 10) -> LabeledImageSet:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 4 or labels.ndim != 1:
        raise DatasetError(f"{images_path} / {labels_path}: expected an image file and a label file")
    if len(images) != len(labels):
        raise DatasetError(get_error_message('COUNT_MISMATCH', images=len(images), labels=len(labels)))
    return LabeledImageSet(images, labels, num_classes)


def find_mnist(data_dir, split: str) -> Optional[Tuple[Path, Path]]:
    """Locate the IDX pair for a split, plain or gzipped; None when absent."""
    if data_dir is None:
        return None
    root = Path(data_dir)
    found = []
    for stem in MNIST_FILES[split]:
        candidates = [root / stem, root / f"{stem}.gz"]
        match = next((c for c in candidates if c.exists()), None)
        if match is None:
            return None
        found.append(match)
    return found[0], found[1]


# *** task construction ***
def make_toy_task(mnist: LabeledImageSet, spec: ToyTaskSpec, rng: np.random.Generator
                  ) -> Tuple[LabeledImageSet, LabeledImageSet]:
    """
    Build MNIST6-180 or MNIST6-M from images of the source digit.

    A random half is transformed and labelled 1; the rest keep label 0.
    The train/test split is stratified by class.

    Raises:
        DatasetError: If no source digits are present
    """
    source = mnist.images[mnist.labels == spec.source_digit]
    if len(source) == 0:
        raise DatasetError(get_error_message('NO_SOURCE_DIGITS', digit=spec.source_digit))
    return _split_transformed(source, spec, rng)


def _split_transformed(source: np.ndarray, spec: ToyTaskSpec, rng: np.random.Generator):
    n = len(source)
    order = rng.permutation(n)
    transformed = order[:n // 2]
    images = source.copy()
    images[transformed] = spec.apply(source[transformed])
    labels = np.zeros(n, dtype=np.int64)
    labels[transformed] = 1

    train_idx, test_idx = [], []
    for label in (0, 1):
        members = rng.permutation(np.flatnonzero(labels == label))
        cut = int(round(len(members) * spec.train_fraction))
        train_idx.append(members[:cut])
        test_idx.append(members[cut:])
    full = LabeledImageSet(images, labels, 2)
    return full.take(np.sort(np.concatenate(train_idx))), full.take(np.sort(np.concatenate(test_idx)))


def make_rotmnist(mnist: LabeledImageSet, rng: np.random.Generator,
                  angles: Optional[np.ndarray] = None) -> LabeledImageSet:
    """Rotate every image by its own angle ~ U[0, 2 pi) about the image centre (bilinear, zero fill)."""
    if angles is None:
        angles = rng.uniform(0.0, 2.0 * math.pi, size=len(mnist))
    rotated = np.stack([transform_image(image, FiberElement(float(a), 1))
                        for image, a in zip(mnist.images, angles)]) if len(mnist) else mnist.images
    return LabeledImageSet(np.clip(rotated, 0.0, 1.0), mnist.labels.copy(), mnist.num_classes)


def _stroke(canvas: np.ndarray, p0, p1, width: float):
    """Draw an anti-aliased segment from p0 to p1, points given as (x, y) plane coordinates."""
    size = canvas.shape[0]
    centre = (size - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing='ij')
    px, py = cols - centre, rows - centre
    p0, p1 = np.asarray(p0, dtype=np.float64), np.asarray(p1, dtype=np.float64)
    d = p1 - p0
    t = np.clip(((px - p0[0]) * d[0] + (py - p0[1]) * d[1]) / max(float(d @ d), 1e-12), 0.0, 1.0)
    dist = np.hypot(px - (p0[0] + t * d[0]), py - (p0[1] + t * d[1]))
    np.maximum(canvas, np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0), out=canvas)


def _rotate_points(points, angle: float, shift):
    c, s = math.cos(angle), math.sin(angle)
    return [(c * x - s * y + shift[0], s * x + c * y + shift[1]) for x, y in points]


def _draw(strokes, angle: float, shift, width: float, size: int = IMAGE_SIZE) -> np.ndarray:
    canvas = np.zeros((size, size), dtype=np.float64)
    for segment in strokes:
        p0, p1 = _rotate_points(segment, angle, shift)
        _stroke(canvas, p0, p1, width)
    return canvas


def _chevron(rng: np.random.Generator) -> list:
    """An upward chevron with a tail off its left arm; y grows downwards in image rows."""
    half_width = rng.uniform(5.0, 8.0)
    height = rng.uniform(5.0, 8.0)
    apex = (0.0, -height)
    left, right = (-half_width, height), (half_width, height)
    tail = (-half_width, height - rng.uniform(4.0, 7.0))
    return [(apex, left), (apex, right), (left, tail)]


def procedural_fallback(n: int, rng: np.random.Generator, transform: str = 'rotate180'
                        ) -> LabeledImageSet:
    """
    Pose-sensitive glyphs standing in for MNIST6 tasks.

    Every image is a jittered chevron with a tail; the images of class 1 are
    the exact transform (180 degree rotation or mirror) of freshly drawn
    class-0 glyphs, so the classes differ only by pose.

    Raises:
        DatasetError: If n < 2
    """
    if n < 2:
        raise DatasetError(get_error_message('BAD_SIZE', op='procedural_fallback', minimum=2, n=n))
    spec = ToyTaskSpec(transform)
    images = np.empty((n, 1, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    for i in range(n):
        angle = rng.uniform(-math.pi / 12, math.pi / 12)
        shift = rng.uniform(-2.0, 2.0, size=2)
        images[i, 0] = _draw(_chevron(rng), angle, shift, rng.uniform(1.5, 2.5))
    labels = np.zeros(n, dtype=np.int64)
    labels[1::2] = 1
    images[1::2] = spec.apply(images[1::2])
    return LabeledImageSet(images, labels, 2)


GLYPH_SHAPES = {
    0: lambda s: [((-s, 0.0), (s, 0.0))],
    1: lambda s: [((-s, -s), (-s, s)), ((-s, s), (s, s))],
    2: lambda s: [((-s, -s), (s, -s)), ((0.0, -s), (0.0, s))],
    3: lambda s: [((0.0, -s), (-s, s)), ((0.0, -s), (s, s)), ((-s, s), (s, s))],
}


def procedural_glyphs(n: int, rng: np.random.Generator) -> LabeledImageSet:
    """Four shape classes (bar, L, T, triangle), each drawn at a uniformly random rotation."""
    if n < len(GLYPH_SHAPES):
        raise DatasetError(get_error_message('BAD_SIZE', op='procedural_glyphs', minimum=len(GLYPH_SHAPES), n=n))
    images = np.empty((n, 1, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    labels = np.arange(n, dtype=np.int64) % len(GLYPH_SHAPES)
    for i, label in enumerate(labels):
        strokes = GLYPH_SHAPES[int(label)](rng.uniform(5.0, 8.0))
        images[i, 0] = _draw(strokes, rng.uniform(0.0, 2.0 * math.pi), rng.uniform(-1.5, 1.5, size=2),
                             rng.uniform(1.5, 2.5))
    return LabeledImageSet(images, labels, len(GLYPH_SHAPES))


def _split(data: LabeledImageSet, train_fraction: float, rng: np.random.Generator):
    order = rng.permutation(len(data))
    cut = int(round(len(data) * train_fraction))
    return data.take(np.sort(order[:cut])), data.take(np.sort(order[cut:]))


class DatasetService:
    """Resolves a task name to train and test sets."""

    @staticmethod
    def load_task(task: str, data_dir, rng: np.random.Generator, train_size: Optional[int] = None,
                  test_size: Optional[int] = None, allow_fallback: bool = True
                  ) -> Tuple[LabeledImageSet, LabeledImageSet]:
        """
        Build the train and test sets of a task.

        IDX files are looked up in data_dir; when absent and the fallback is
        allowed, procedural data of the same structure is generated.

        Raises:
            DatasetError: If files are missing and the fallback is disabled
        """
        if not TaskName.is_valid(task):
            raise DatasetError(f"unknown task {task!r}; allowed: {TaskName.all_tasks()}")
        n_train, n_test = train_size or 2000, test_size or 500

        if task == TaskName.PROCEDURAL:
            return procedural_fallback(n_train, rng), procedural_fallback(n_test, rng)

        paths = find_mnist(data_dir, 'train')
        if paths is None:
            if not allow_fallback:
                error = DatasetError(get_error_message('MISSING_DATASET', task=task, data_dir=data_dir))
                log_error_with_context(error, {'task': task, 'data_dir': data_dir}, 'DatasetService.load_task')
                raise error
            logger.warning(f"MNIST files not found in {data_dir}; generating procedural data for {task}")
            if TaskName.is_toy_task(task):
                transform = ToyTaskSpec.for_task(task).transform
                return procedural_fallback(n_train, rng, transform), procedural_fallback(n_test, rng, transform)
            return procedural_glyphs(n_train, rng), procedural_glyphs(n_test, rng)

        mnist = load_labeled_set(*paths)
        logger.info(f"Loaded {len(mnist)} MNIST images from {paths[0]}")
        if TaskName.is_toy_task(task):
            train, test = make_toy_task(mnist, ToyTaskSpec.for_task(task), rng)
            return train.subsample(train_size, rng), test.subsample(test_size, rng)

        test_paths = find_mnist(data_dir, 'test')
        test_source = load_labeled_set(*test_paths) if test_paths is not None else None
        if test_source is None:
            mnist, test_source = _split(mnist, 0.8, rng)
        train = make_rotmnist(mnist.subsample(train_size, rng), rng)
        test = make_rotmnist(test_source.subsample(test_size, rng), rng)
        return train, test
