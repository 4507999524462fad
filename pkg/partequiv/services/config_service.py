"""Run configuration: presets, `key = value` files and command-line overrides."""
import dataclasses
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from config import config as presets
from partequiv.constants import GroupKind, KernelVariant, PoolingPlacement, TaskName
from partequiv.groups import GroupSpec
from partequiv.models import NetworkConfig
from partequiv.utils.error_handling import ConfigError
from partequiv.utils.serializers import serialize_for_json
from partequiv.utils.validators import (
    validate_bool, validate_choice, validate_float, validate_integer, validate_odd, validate_path,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a training run."""

    task: str = TaskName.MNIST6_180
    group: str = GroupKind.SO2
    discrete_n: Optional[int] = None
    n_elements: int = 8
    partial: bool = True
    epochs: int = 300
    batch_size: int = 64
    lr_main: float = 1e-3
    lr_dist: float = 1e-4
    weight_decay: float = 0.0
    warmup_epochs: int = 5
    seed: int = 0
    out_dir: str = 'runs/default'
    kernel: str = KernelVariant.SIREN
    desk: bool = False
    data_dir: Optional[str] = None
    train_size: Optional[int] = None
    test_size: Optional[int] = None
    allow_fallback: bool = True
    channels: int = 32
    num_blocks: int = 2
    kernel_size_first: int = 7
    kernel_size: int = 5
    siren_hidden: int = 32
    omega0: float = 30.0
    temperature: float = 1.0
    pooling: Optional[Tuple[str, ...]] = None

    @property
    def group_spec(self) -> GroupSpec:
        return GroupSpec(self.group, self.discrete_n)

    @property
    def num_classes(self) -> int:
        if TaskName.is_toy_task(self.task) or self.task == TaskName.PROCEDURAL:
            return 2
        return 10

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            group=self.group_spec,
            n_elements=self.n_elements,
            channels=self.channels,
            num_blocks=self.num_blocks,
            kernel_size_first=self.kernel_size_first,
            kernel_size=self.kernel_size,
            partial=self.partial,
            pooling=tuple(self.pooling) if self.pooling else PoolingPlacement.for_task(self.task),
            kernel_variant=self.kernel,
            num_classes=self.num_classes,
            siren_hidden=self.siren_hidden,
            omega0=self.omega0,
            temperature=self.temperature,
        )

    def to_dict(self) -> Dict[str, Any]:
        return serialize_for_json(self)

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> 'RunConfig':
        return ConfigService.validate(dict(values))

    def replace(self, **changes) -> 'RunConfig':
        return ConfigService.validate({**self.to_dict(), **changes})


FIELD_NAMES = tuple(f.name for f in dataclasses.fields(RunConfig))

# Preset class attributes that feed RunConfig fields.
PRESET_KEYS = {
    'EPOCHS': 'epochs', 'BATCH_SIZE': 'batch_size', 'LR_MAIN': 'lr_main', 'LR_DIST': 'lr_dist',
    'WARMUP_EPOCHS': 'warmup_epochs', 'WEIGHT_DECAY': 'weight_decay', 'N_ELEMENTS': 'n_elements',
    'CHANNELS': 'channels', 'NUM_BLOCKS': 'num_blocks', 'KERNEL_SIZE_FIRST': 'kernel_size_first',
    'KERNEL_SIZE': 'kernel_size', 'SIREN_HIDDEN': 'siren_hidden', 'SIREN_OMEGA0': 'omega0',
    'TEMPERATURE': 'temperature', 'SEED': 'seed', 'TRAIN_SIZE': 'train_size', 'TEST_SIZE': 'test_size',
    'ALLOW_FALLBACK': 'allow_fallback', 'POOLING': 'pooling',
}


def _optional(value, parse):
    if value is None or (isinstance(value, str) and value.strip().lower() in ('', 'none', 'null')):
        return None
    return parse(value)


def _pooling(value):
    items = value.split(',') if isinstance(value, str) else list(value)
    items = tuple(str(item).strip() for item in items if str(item).strip())
    for item in items:
        validate_choice(item, PoolingPlacement.all_placements(), 'pooling')
    return items


FIELD_VALIDATORS = {
    'task': lambda v: validate_choice(str(v).strip(), TaskName.all_tasks(), 'task'),
    'group': lambda v: validate_choice(str(v).strip().lower(), GroupKind.all_kinds(), 'group'),
    'discrete_n': lambda v: _optional(v, lambda x: validate_integer(x, 'discrete_n', min_value=1)),
    'n_elements': lambda v: validate_integer(v, 'n_elements', min_value=1),
    'partial': lambda v: validate_bool(v, 'partial'),
    'epochs': lambda v: validate_integer(v, 'epochs', min_value=1),
    'batch_size': lambda v: validate_integer(v, 'batch_size', min_value=1),
    'lr_main': lambda v: validate_float(v, 'lr_main', min_value=0.0, exclusive_min=True),
    'lr_dist': lambda v: validate_float(v, 'lr_dist', min_value=0.0, exclusive_min=True),
    'weight_decay': lambda v: validate_float(v, 'weight_decay', min_value=0.0),
    'warmup_epochs': lambda v: validate_integer(v, 'warmup_epochs', min_value=0),
    'seed': lambda v: validate_integer(v, 'seed', min_value=0),
    'out_dir': lambda v: str(validate_path(v, 'out_dir')),
    'kernel': lambda v: validate_choice(str(v).strip().lower(), KernelVariant.all_variants(), 'kernel'),
    'desk': lambda v: validate_bool(v, 'desk'),
    'data_dir': lambda v: _optional(v, lambda x: str(validate_path(x, 'data_dir'))),
    'train_size': lambda v: _optional(v, lambda x: validate_integer(x, 'train_size', min_value=2)),
    'test_size': lambda v: _optional(v, lambda x: validate_integer(x, 'test_size', min_value=1)),
    'allow_fallback': lambda v: validate_bool(v, 'allow_fallback'),
    'channels': lambda v: validate_integer(v, 'channels', min_value=1),
    'num_blocks': lambda v: validate_integer(v, 'num_blocks', min_value=0),
    'kernel_size_first': lambda v: validate_odd(v, 'kernel_size_first'),
    'kernel_size': lambda v: validate_odd(v, 'kernel_size'),
    'siren_hidden': lambda v: validate_integer(v, 'siren_hidden', min_value=1),
    'omega0': lambda v: validate_float(v, 'omega0', min_value=0.0, exclusive_min=True),
    'temperature': lambda v: validate_float(v, 'temperature', min_value=0.0, exclusive_min=True),
    'pooling': lambda v: _optional(v, _pooling),
}


class ConfigService:
    """Builds RunConfig values with precedence preset < config file < flags."""

    @staticmethod
    def preset_values(name: Optional[str] = None) -> Dict[str, Any]:
        """RunConfig fields taken from a preset class in config.py."""
        name = name or os.environ.get('PARTEQUIV_CONFIG') or 'default'
        if name not in presets:
            raise ConfigError(f"unknown preset {name!r}; allowed: {', '.join(sorted(presets))}")
        preset = presets[name]
        values = {field: getattr(preset, attr) for attr, field in PRESET_KEYS.items() if hasattr(preset, attr)}
        if name == 'desk':
            values['desk'] = True
        return values

    @staticmethod
    def read_config_file(path) -> Dict[str, str]:
        """
        Parse `key = value` lines; `#` starts a comment, keys are case-insensitive.

        Raises:
            ConfigError: On malformed lines or unknown keys
        """
        path = validate_path(path, 'config', must_exist=True)
        values = {}
        for number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split('=', 1))
            key = key.lower().replace('-', '_')
            if key not in FIELD_NAMES:
                raise ConfigError(f"{path}:{number}: unknown configuration key {key!r}")
            values[key] = value
        return values

    @staticmethod
    def validate(values: Dict[str, Any]) -> RunConfig:
        """Validate raw values field by field; errors name the offending key."""
        unknown = set(values) - set(FIELD_NAMES)
        if unknown:
            raise ConfigError(f"unknown configuration key {sorted(unknown)[0]!r}")
        parsed = {key: FIELD_VALIDATORS[key](value) for key, value in values.items()}
        if parsed.get('discrete_n') is not None and parsed.get('group', RunConfig.group) not in (GroupKind.SO2, GroupKind.O2):
            raise ConfigError("discrete_n only applies to the so2 and o2 groups")
        return RunConfig(**parsed)

    @staticmethod
    def build_run_config(preset: Optional[str] = None, config_file=None,
                         overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
        """
        Merge a preset, an optional config file and explicit overrides.

        Overrides whose value is None are ignored so unset CLI flags do not
        clobber file or preset values.
        """
        values = ConfigService.preset_values(preset)
        if config_file is not None:
            values.update(ConfigService.read_config_file(config_file))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        if values.get('data_dir') is None and os.environ.get('PARTEQUIV_DATA_DIR'):
            values['data_dir'] = os.environ['PARTEQUIV_DATA_DIR']
        run_config = ConfigService.validate(values)
        logger.debug(f"Run configuration: {run_config.to_dict()}")
        return run_config
