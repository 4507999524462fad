"""The Partial G-CNN classifier and its configuration."""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from partequiv.autodiff import Linear, Module, Parameter, Tensor, as_tensor
from partequiv.autodiff import functional as F
from partequiv.constants import GroupKind, KernelVariant, PoolingPlacement
from partequiv.distributions import SubsetDistribution, build_distribution
from partequiv.errors import get_error_message
from partequiv.groups import GroupSpec
from partequiv.kernelnet import KernelNet
from partequiv.layers import (
    FiberBatchNorm, GroupConvLayer, LiftedFeatureMap, LiftingLayer, ResBlock, fiber_maxpool, fiber_relu,
)
from partequiv.utils.error_handling import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture of a Partial G-CNN."""

    group: GroupSpec = field(default_factory=lambda: GroupSpec(GroupKind.SO2))
    n_elements: int = 8
    channels: int = 32
    num_blocks: int = 2
    kernel_size_first: int = 7
    kernel_size: int = 5
    partial: bool = True
    partial_layers: Optional[Tuple[bool, ...]] = None
    pooling: Tuple[str, ...] = ('block',)
    kernel_variant: str = KernelVariant.SIREN
    in_channels: int = 1
    num_classes: int = 10
    siren_hidden: int = 32
    omega0: float = 30.0
    temperature: float = 1.0
    disk_mask: bool = True

    def __post_init__(self):
        allowed = PoolingPlacement.all_placements()
        for placement in self.pooling:
            if placement not in allowed:
                raise ConfigError(get_error_message('BAD_POOLING', placement=placement, allowed=allowed))
        if self.n_elements < 1:
            raise ConfigError(f"n_elements must be at least 1, got {self.n_elements}")
        if self.partial_layers is not None and len(self.partial_layers) != self.num_layers:
            raise ConfigError(f"partial_layers needs {self.num_layers} flags, got {len(self.partial_layers)}")
        for k in (self.kernel_size_first, self.kernel_size):
            if k % 2 == 0:
                raise ConfigError(get_error_message('EVEN_KERNEL', k=k))

    @property
    def num_layers(self) -> int:
        """Convolutions carrying a distribution: the lifting layer plus two per block."""
        return 1 + 2 * self.num_blocks

    def layer_is_partial(self, index: int) -> bool:
        if self.partial_layers is not None:
            return self.partial_layers[index]
        return self.partial


class PartialGCNN(Module):
    """Lifting conv -> residual blocks -> global max over fiber and space -> linear."""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.record_activations = False
        self.activations: List[Tuple[str, Tensor]] = []

        def net(c_out, c_in, lifting=False):
            return KernelNet.for_group(cfg.group, c_out, c_in, rng, lifting=lifting, variant=cfg.kernel_variant,
                                       hidden=cfg.siren_hidden, omega0=cfg.omega0)

        def dist(index):
            return build_distribution(cfg.group, cfg.layer_is_partial(index), cfg.temperature)

        self.lifting = LiftingLayer(net(cfg.channels, cfg.in_channels, lifting=True), dist(0),
                                    cfg.n_elements, cfg.kernel_size_first, cfg.disk_mask)
        self.blocks = []
        for b in range(cfg.num_blocks):
            conv1 = GroupConvLayer(net(cfg.channels, cfg.channels), dist(1 + 2 * b),
                                   cfg.n_elements, cfg.kernel_size, cfg.disk_mask)
            conv2 = GroupConvLayer(net(cfg.channels, cfg.channels), dist(2 + 2 * b),
                                   cfg.n_elements, cfg.kernel_size, cfg.disk_mask)
            self.blocks.append(ResBlock(cfg.channels, conv1, conv2))
        self.head_bn = FiberBatchNorm(cfg.channels)
        self.classifier = Linear(cfg.channels, cfg.num_classes, rng)

    def conv_layers(self) -> List[Tuple[str, Module]]:
        layers = [('lifting', self.lifting)]
        for b, block in enumerate(self.blocks):
            layers.append((f"block{b}.conv1", block.conv1))
            layers.append((f"block{b}.conv2", block.conv2))
        return layers

    def distributions(self) -> List[Tuple[str, SubsetDistribution]]:
        return [(name, layer.dist) for name, layer in self.conv_layers()]

    def distribution_parameters(self) -> List[Tuple[str, Parameter]]:
        return [(name, p) for name, p in self.named_parameters() if '.dist.' in name]

    def main_parameters(self) -> List[Tuple[str, Parameter]]:
        return [(name, p) for name, p in self.named_parameters() if '.dist.' not in name]

    def clamp_distributions(self):
        for _, dist in self.distributions():
            dist.clamp_()

    def effective_sample_counts(self) -> List[Tuple[str, int]]:
        return [(name, layer.dist.effective_sample_count(layer.n_max)) for name, layer in self.conv_layers()]

    def _record(self, name: str, values: Tensor):
        if self.record_activations:
            self.activations.append((name, values))

    def features(self, images, rng: Optional[np.random.Generator] = None) -> LiftedFeatureMap:
        """Everything before the invariant head."""
        rng = rng if rng is not None else self.rng
        self.activations = []
        pooling = self.cfg.pooling
        x = self.lifting(as_tensor(images), rng)
        self._record('lifting', x.values)
        if PoolingPlacement.LIFTING in pooling:
            x = fiber_maxpool(x)
        for b, block in enumerate(self.blocks):
            x = block(x, rng, self.activations if self.record_activations else None, f"block{b}.")
            if PoolingPlacement.BLOCK in pooling or (PoolingPlacement.FIRST_BLOCK in pooling and b == 0):
                x = fiber_maxpool(x)
        return x

    def forward(self, images, rng: Optional[np.random.Generator] = None) -> Tensor:
        x = fiber_relu(self.head_bn(self.features(images, rng)))
        values = x.values
        if x.is_masked:
            values = values.take(np.flatnonzero(x.included), axis=2)
        pooled = F.max_reduce(values, axis=(2, 3, 4))
        self._record('pooled', pooled)
        logits = self.classifier(pooled)
        self._record('logits', logits)
        return logits


def build_network(cfg: NetworkConfig, rng: np.random.Generator) -> PartialGCNN:
    """Instantiate the network; parameter count does not depend on n_elements."""
    model = PartialGCNN(cfg, rng)
    logger.debug(f"Built {cfg.group.kind} network with {model.num_parameters()} parameters, "
                 f"N={cfg.n_elements}, pooling={cfg.pooling}")
    return model


def forward(model: PartialGCNN, images, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Class logits for a batch of B x C x H x W images."""
    return model(images, rng)
