"""Lifting, group and partial group convolutions on lifted feature maps."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from partequiv.autodiff import BatchNorm, Module, Tensor, as_tensor
from partequiv.autodiff import functional as F
from partequiv.distributions import FiberSample, SubsetDistribution
from partequiv.errors import get_error_message
from partequiv.groups import FiberElement, nearest_index
from partequiv.kernelnet import KernelNet, group_kernel_bank, lifting_kernel_bank
from partequiv.utils.error_handling import ShapeError

logger = logging.getLogger(__name__)

Coords = Union[FiberSample, Sequence[FiberElement]]


@dataclass
class LiftedFeatureMap:
    """Values of shape B x C x n_fiber x H x W sampled at `fiber_coords`."""

    values: Tensor
    fiber_coords: List[FiberElement]
    angles: Tensor
    mirrors: np.ndarray
    weights: Optional[Tensor] = None

    def __post_init__(self):
        if not self.fiber_coords:
            raise ShapeError(get_error_message('EMPTY_COORDS', op='LiftedFeatureMap'))
        if self.values.ndim != 5 or self.values.shape[2] != len(self.fiber_coords):
            raise ShapeError(get_error_message('SHAPE_MISMATCH', op='LiftedFeatureMap',
                                               left=self.values.shape, right=(len(self.fiber_coords),)))

    @property
    def n_fiber(self) -> int:
        return len(self.fiber_coords)

    @property
    def included(self) -> Optional[np.ndarray]:
        """Boolean mask of the coordinates that carry signal, or None when every one does."""
        if self.weights is None:
            return None
        return self.weights.data > 0.5

    @property
    def is_masked(self) -> bool:
        return self.weights is not None and not self.included.all()

    def fiber_mask(self) -> Optional[np.ndarray]:
        """The inclusion mask shaped to broadcast against `values`."""
        if not self.is_masked:
            return None
        return self.included.astype(self.values.dtype).reshape(1, 1, self.n_fiber, 1, 1)

    def with_values(self, values: Tensor) -> 'LiftedFeatureMap':
        """Same coordinates, new values; excluded slices are zeroed again."""
        mask = self.fiber_mask()
        if mask is not None:
            values = values * mask
        return LiftedFeatureMap(values, self.fiber_coords, self.angles, self.mirrors, self.weights)


def _as_sample(coords: Coords) -> FiberSample:
    if isinstance(coords, FiberSample):
        return coords
    coords = list(coords)
    if not coords:
        raise ShapeError(get_error_message('EMPTY_COORDS', op='convolution'))
    return FiberSample.constant(coords)


def _weighted(values: Tensor, sample: FiberSample) -> Tensor:
    if sample.weights is None:
        return values
    return values * sample.weights.reshape(1, 1, len(sample), 1, 1)


def lifting_conv(image, net: KernelNet, out_coords: Coords, k: int = 7,
                 disk_mask: bool = True) -> LiftedFeatureMap:
    """
    Lift a planar B x C x H x W signal onto the fiber coordinates `out_coords`.

    Output slice u is the image convolved with the kernel psi(u^-1 x).
    """
    image = as_tensor(image)
    if image.ndim != 4:
        raise ShapeError(get_error_message('BAD_RANK', op='lifting_conv', expected=4, shape=image.shape))
    sample = _as_sample(out_coords)
    bank = lifting_kernel_bank(net, sample.angles, sample.mirrors, k, disk_mask)
    out = F.conv2d(image, bank, padding=k // 2)
    b, _, h, w = out.shape
    values = out.reshape(b, net.c_out, len(sample), h, w)
    return LiftedFeatureMap(_weighted(values, sample), sample.elements, sample.angles, sample.mirrors,
                            sample.weights)


def group_conv(feature_map: LiftedFeatureMap, net: KernelNet, out_coords: Coords, k: int = 5,
               disk_mask: bool = True) -> LiftedFeatureMap:
    """
    Monte Carlo group convolution onto `out_coords`.

    Output (u, x) = 1/n_in * sum_v [input slice v correlated with psi(v^-1 ., v^-1 u)](x).
    When the input carries inclusion weights the sum is normalised by their total
    instead, so excluded slices neither contribute nor dilute the average.
    """
    sample = _as_sample(out_coords)
    values = feature_map.values
    b, c_in, n_in, h, w = values.shape
    if c_in != net.c_in:
        raise ShapeError(get_error_message('SHAPE_MISMATCH', op='group_conv',
                                           left=values.shape, right=(net.c_out, net.c_in)))
    bank = group_kernel_bank(net, sample.angles, sample.mirrors, feature_map.angles, feature_map.mirrors,
                             k, disk_mask)
    out = F.conv2d(values.reshape(b, c_in * n_in, h, w), bank, padding=k // 2)
    if feature_map.weights is None:
        out = out * (1.0 / n_in)
    else:
        out = out / feature_map.weights.sum()
    out = out.reshape(b, net.c_out, len(sample), h, w)
    return LiftedFeatureMap(_weighted(out, sample), sample.elements, sample.angles, sample.mirrors,
                            sample.weights)


def partial_group_conv(feature_map: LiftedFeatureMap, net: KernelNet, dist: SubsetDistribution, n_out: int,
                       rng: np.random.Generator, k: int = 5, disk_mask: bool = True) -> LiftedFeatureMap:
    """Draw output coordinates from `dist`, then group-convolve onto them."""
    sample = dist.sample(n_out, rng)
    return group_conv(feature_map, net, sample, k, disk_mask)


def effective_sample_count(dist: SubsetDistribution, n_max: int) -> int:
    """Samples a layer draws: N scaled by the fraction of the group the distribution covers."""
    return dist.effective_sample_count(n_max)


def project_fiber(feature_map: LiftedFeatureMap, target: Sequence[FiberElement]) -> Tensor:
    """
    Values of `feature_map` re-indexed to `target` by nearest fiber coordinate.

    Only included coordinates are candidates, so a masked map projects the same
    way as the map holding just its included slices.
    """
    candidates = list(range(feature_map.n_fiber))
    if feature_map.is_masked:
        candidates = np.flatnonzero(feature_map.included).tolist()
    coords = [feature_map.fiber_coords[i] for i in candidates]
    indices = [candidates[nearest_index(g, coords)] for g in target]
    if indices == list(range(feature_map.n_fiber)):
        return feature_map.values
    return feature_map.values.take(indices, axis=2)


def fiber_relu(feature_map: LiftedFeatureMap) -> LiftedFeatureMap:
    return feature_map.with_values(F.relu(feature_map.values))


def fiber_maxpool(feature_map: LiftedFeatureMap, size: int = 2) -> LiftedFeatureMap:
    """Spatial max pooling applied to every fiber slice."""
    return feature_map.with_values(F.maxpool2d(feature_map.values, size))


class FiberBatchNorm(BatchNorm):
    """Batch normalisation pooled over batch, included fiber slices and space per channel."""

    def forward(self, feature_map: LiftedFeatureMap) -> LiftedFeatureMap:
        return feature_map.with_values(super().forward(feature_map.values, mask=feature_map.fiber_mask()))


class LiftingLayer(Module):
    """Lifting convolution with its own learnable output distribution."""

    def __init__(self, net: KernelNet, dist: SubsetDistribution, n_max: int, k: int, disk_mask: bool = True):
        self.net = net
        self.dist = dist
        self.n_max = n_max
        self.k = k
        self.disk_mask = disk_mask

    def forward(self, image, rng: np.random.Generator) -> LiftedFeatureMap:
        n_out = self.dist.effective_sample_count(self.n_max)
        return lifting_conv(image, self.net, self.dist.sample(n_out, rng), self.k, self.disk_mask)


class GroupConvLayer(Module):
    """Partial group convolution with its own learnable output distribution."""

    def __init__(self, net: KernelNet, dist: SubsetDistribution, n_max: int, k: int, disk_mask: bool = True):
        self.net = net
        self.dist = dist
        self.n_max = n_max
        self.k = k
        self.disk_mask = disk_mask

    def forward(self, feature_map: LiftedFeatureMap, rng: np.random.Generator) -> LiftedFeatureMap:
        n_out = self.dist.effective_sample_count(self.n_max)
        return partial_group_conv(feature_map, self.net, self.dist, n_out, rng, self.k, self.disk_mask)


class ResBlock(Module):
    """(BN -> ReLU -> group conv) x 2 plus a skip connection."""

    def __init__(self, channels: int, conv1: GroupConvLayer, conv2: GroupConvLayer):
        self.bn1 = FiberBatchNorm(channels)
        self.conv1 = conv1
        self.bn2 = FiberBatchNorm(channels)
        self.conv2 = conv2

    def forward(self, feature_map: LiftedFeatureMap, rng: np.random.Generator,
                record: Optional[list] = None, prefix: str = '') -> LiftedFeatureMap:
        h = self.conv1(fiber_relu(self.bn1(feature_map)), rng)
        if record is not None:
            record.append((f"{prefix}conv1", h.values))
        h = self.conv2(fiber_relu(self.bn2(h)), rng)
        if record is not None:
            record.append((f"{prefix}conv2", h.values))
        return h.with_values(h.values + project_fiber(feature_map, h.fiber_coords))
