"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic        8 bytes   b"PEQVCKPT"
    version      uint32
    meta length  uint32, then UTF-8 JSON {config, epoch, rng_state}
    blob count   uint32
    per blob:    uint16 name length, name (UTF-8), uint8 ndim, ndim x uint32 dims,
                 prod(dims) float32 values
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from partequiv.autodiff import Adam
from partequiv.errors import get_error_message
from partequiv.models import PartialGCNN, build_network
from partequiv.services.config_service import RunConfig
from partequiv.utils.error_handling import CheckpointError, log_error_with_context
from partequiv.version import CHECKPOINT_FORMAT_VERSION

logger = logging.getLogger(__name__)

MAGIC = b'PEQVCKPT'

# Fields that must agree between a checkpoint and the run resuming from it.
ARCHITECTURE_FIELDS = (
    'task', 'group', 'discrete_n', 'n_elements', 'partial', 'kernel', 'channels', 'num_blocks',
    'kernel_size_first', 'kernel_size', 'siren_hidden', 'omega0', 'temperature', 'pooling',
)


@dataclass
class CheckpointData:
    config: dict
    epoch: int = 0
    rng_state: Optional[dict] = None
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    version: int = CHECKPOINT_FORMAT_VERSION

    @property
    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config)


def write_checkpoint(path, data: CheckpointData):
    meta = json.dumps({'config': data.config, 'epoch': data.epoch, 'rng_state': data.rng_state},
                      sort_keys=True).encode('utf-8')
    parts = [MAGIC, struct.pack('<I', data.version), struct.pack('<I', len(meta)), meta,
             struct.pack('<I', len(data.arrays))]
    for name, array in data.arrays.items():
        encoded = name.encode('utf-8')
        array = np.ascontiguousarray(array, dtype='<f4')
        parts.append(struct.pack('<H', len(encoded)) + encoded)
        parts.append(struct.pack('<B', array.ndim) + struct.pack(f'<{array.ndim}I', *array.shape))
        parts.append(array.tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    tmp.write_bytes(b''.join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> CheckpointData:
    """
    Parse a checkpoint file.

    Raises:
        CheckpointError: On a bad magic string, a different format version or truncation
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(get_error_message('BAD_MAGIC', path=path))
    (version,) = reader.unpack('<I')
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(get_error_message('VERSION_MISMATCH', path=path, found=version,
                                                expected=CHECKPOINT_FORMAT_VERSION))
    (meta_len,) = reader.unpack('<I')
    meta = json.loads(reader.take(meta_len).decode('utf-8'))
    (count,) = reader.unpack('<I')
    arrays = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8')
        (ndim,) = reader.unpack('<B')
        shape = reader.unpack(f'<{ndim}I') if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(reader.take(4 * size), dtype='<f4').reshape(shape).astype(np.float32)
    return CheckpointData(meta['config'], int(meta['epoch']), meta.get('rng_state'), arrays, version)


def model_arrays(model: PartialGCNN) -> Dict[str, np.ndarray]:
    arrays = {f"param.{name}": p.data for name, p in model.named_parameters()}
    arrays.update({f"buffer.{name}": array for name, array in model.named_buffers()})
    return arrays


def _assign(target: np.ndarray, arrays: Dict[str, np.ndarray], name: str):
    if name not in arrays:
        raise CheckpointError(get_error_message('MISSING_BLOB', name=name))
    source = arrays[name]
    if source.shape != target.shape:
        raise CheckpointError(get_error_message('BLOB_SHAPE', name=name, found=source.shape, expected=target.shape))
    target[...] = source


def check_compatible(stored: dict, expected: RunConfig):
    """Raise CheckpointError naming the first architecture field that differs."""
    wanted = expected.to_dict()
    for name in ARCHITECTURE_FIELDS:
        found = stored.get(name)
        if found != wanted.get(name):
            raise CheckpointError(get_error_message('CONFIG_MISMATCH', field=name, found=found,
                                                    expected=wanted.get(name)))


class CheckpointService:
    """Saves and restores models, optimiser state and the training RNG."""

    @staticmethod
    def save(path, model: PartialGCNN, run_config: RunConfig, optimizer: Optional[Adam] = None,
             epoch: int = 0, rng: Optional[np.random.Generator] = None):
        arrays = model_arrays(model)
        if optimizer is not None:
            arrays.update(optimizer.state_arrays())
        data = CheckpointData(run_config.to_dict(), epoch,
                              rng.bit_generator.state if rng is not None else None, arrays)
        write_checkpoint(path, data)
        logger.info(f"Saved checkpoint for epoch {epoch} to {path}")

    @staticmethod
    def restore_model(model: PartialGCNN, data: CheckpointData):
        for name, p in model.named_parameters():
            _assign(p.data, data.arrays, f"param.{name}")
        for name, array in model.named_buffers():
            _assign(array, data.arrays, f"buffer.{name}")

    @staticmethod
    def restore_optimizer(optimizer: Adam, data: CheckpointData):
        missing = [key for key in optimizer.state_arrays() if key not in data.arrays]
        if missing:
            raise CheckpointError(get_error_message('MISSING_BLOB', name=missing[0]))
        optimizer.load_state_arrays(data.arrays)

    @staticmethod
    def restore_rng(rng: np.random.Generator, data: CheckpointData):
        if data.rng_state is not None:
            rng.bit_generator.state = data.rng_state

    @staticmethod
    def load(path, expected: Optional[RunConfig] = None,
             rng: Optional[np.random.Generator] = None) -> Tuple[PartialGCNN, CheckpointData]:
        """
        Rebuild the stored network and load its weights.

        Args:
            path: Checkpoint file
            expected: When given, architecture fields must match it
            rng: Generator the rebuilt model samples with; its state is restored

        Raises:
            CheckpointError: For unreadable, incompatible or mismatched checkpoints
        """
        try:
            data = read_checkpoint(path)
            if expected is not None:
                check_compatible(data.config, expected)
            run_config = data.run_config
            rng = rng if rng is not None else np.random.default_rng(run_config.seed)
            model = build_network(run_config.network_config(), np.random.default_rng(run_config.seed))
            model.rng = rng
            CheckpointService.restore_model(model, data)
            CheckpointService.restore_rng(rng, data)
        except CheckpointError as e:
            log_error_with_context(e, {'path': str(path)}, 'CheckpointService.load')
            raise
        logger.info(f"Loaded checkpoint {path} (epoch {data.epoch})")
        return model, data
