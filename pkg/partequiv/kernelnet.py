"""Implicit kernel networks.

A KernelNet maps a relative coordinate (a normalised spatial offset plus an
embedding of the relative fiber element) to a C_out x C_in block of kernel
values. Because the net is evaluated at exact transformed coordinates,
rotated kernels need no interpolation.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from partequiv.autodiff import Linear, Module, Tensor, concat, stack
from partequiv.autodiff import functional as F
from partequiv.constants import KernelVariant
from partequiv.errors import get_error_message
from partequiv.groups import FiberElement, GroupSpec, act_on_plane, inverse, relative_element
from partequiv.utils.error_handling import KernelError

logger = logging.getLogger(__name__)


@dataclass
class RelativeCoordinates:
    """A batch of relative coordinates with arbitrary leading shape.

    spatial: (..., 2) offsets in [-1, 1]^2
    fiber_embed: (..., 2) as (cos, sin) of the relative angle, or None
    mirror_rel: (...) relative mirror signs, or None
    """

    spatial: Tensor
    fiber_embed: Optional[Tensor] = None
    mirror_rel: Optional[np.ndarray] = None

    @property
    def lead_shape(self):
        return self.spatial.shape[:-1]

    def features(self) -> Tensor:
        parts = [self.spatial]
        if self.fiber_embed is not None:
            parts.append(self.fiber_embed)
        if self.mirror_rel is not None:
            parts.append(Tensor(np.asarray(self.mirror_rel)[..., None]))
        return concat(parts, axis=-1) if len(parts) > 1 else parts[0]


class SineLayer(Module):
    """sin(omega0 * (x @ W + b)) with SIREN initialisation."""

    def __init__(self, in_dim: int, out_dim: int, omega0: float, is_first: bool, rng: np.random.Generator):
        bound = 1.0 / in_dim if is_first else np.sqrt(6.0 / in_dim) / omega0
        self.linear = Linear(in_dim, out_dim, rng, bound=bound)
        self.omega0 = omega0

    def forward(self, x: Tensor) -> Tensor:
        return F.sin(self.linear(x) * self.omega0)


class KernelNet(Module):
    """
    Three-layer implicit kernel: SIREN or an MLP with ReLU/LeakyReLU/Swish.

    Args:
        c_out: Output channels of the convolution it parameterises
        c_in: Input channels of the convolution it parameterises
        rotation_features: Feed (cos, sin) of the relative angle
        mirror_features: Feed the relative mirror sign
        variant: One of KernelVariant
        hidden: Hidden units
        omega0: SIREN frequency
        rng: Generator used for initialisation
    """

    def __init__(self, c_out: int, c_in: int, rng: np.random.Generator, rotation_features: bool = False,
                 mirror_features: bool = False, variant: str = KernelVariant.SIREN, hidden: int = 32,
                 omega0: float = 30.0, depth: int = 3):
        if not KernelVariant.is_valid(variant):
            raise KernelError(f"unknown kernel variant {variant!r}; allowed: {KernelVariant.all_variants()}")
        self.c_out, self.c_in = c_out, c_in
        self.rotation_features = rotation_features
        self.mirror_features = mirror_features
        self.variant = variant
        self.in_dim = 2 + (2 if rotation_features else 0) + (1 if mirror_features else 0)
        out_dim = c_out * c_in

        self.hidden_layers: List[Module] = []
        width = self.in_dim
        for index in range(depth - 1):
            if variant == KernelVariant.SIREN:
                self.hidden_layers.append(SineLayer(width, hidden, omega0, index == 0, rng))
            else:
                self.hidden_layers.append(Linear(width, hidden, rng, bound=np.sqrt(6.0 / width)))
            width = hidden
        final_bound = np.sqrt(6.0 / width) / omega0 if variant == KernelVariant.SIREN else 1.0 / np.sqrt(width)
        self.output = Linear(width, out_dim, rng, bound=final_bound)

    @classmethod
    def for_group(cls, spec: GroupSpec, c_out: int, c_in: int, rng: np.random.Generator,
                  lifting: bool = False, **kwargs) -> 'KernelNet':
        """A net whose fiber inputs match the group; lifting nets see space only."""
        return cls(c_out, c_in, rng,
                   rotation_features=spec.has_rotations and not lifting,
                   mirror_features=spec.has_mirror and not lifting, **kwargs)

    def _activate(self, x: Tensor) -> Tensor:
        if self.variant == KernelVariant.RELU:
            return F.relu(x)
        if self.variant == KernelVariant.LEAKY_RELU:
            return F.leaky_relu(x, 0.01)
        return F.swish(x)

    def forward(self, features: Tensor) -> Tensor:
        x = features
        for layer in self.hidden_layers:
            x = layer(x) if self.variant == KernelVariant.SIREN else self._activate(layer(x))
        return self.output(x)


def eval_kernel(net: KernelNet, coords: RelativeCoordinates) -> Tensor:
    """
    Evaluate the net on a batch of coordinates.

    Returns:
        Tensor of shape lead_shape + (C_out, C_in)

    Raises:
        KernelError: If the batch is empty or the feature width does not match the net
    """
    lead = coords.lead_shape
    count = int(np.prod(lead)) if lead else 1
    if count == 0:
        raise KernelError(get_error_message('EMPTY_COORDS', op='eval_kernel'))
    features = coords.features()
    if features.shape[-1] != net.in_dim:
        raise KernelError(f"kernel net expects {net.in_dim} input features, got {features.shape[-1]}")
    values = net(features.reshape(count, net.in_dim))
    return values.reshape(tuple(lead) + (net.c_out, net.c_in))


def kernel_offsets(k: int):
    """
    Normalised offsets of a k x k grid and its disk mask.

    Entry (a, b) is the plane offset (b - c, a - c) / c with c = (k - 1) / 2.

    Raises:
        KernelError: If k is even
    """
    if k < 1 or k % 2 == 0:
        raise KernelError(get_error_message('EVEN_KERNEL', k=k))
    c = (k - 1) / 2
    rows, cols = np.meshgrid(np.arange(k), np.arange(k), indexing='ij')
    scale = c if c > 0 else 1.0
    ox = (cols - c) / scale
    oy = (rows - c) / scale
    mask = (ox ** 2 + oy ** 2 <= 1.0 + 1e-6).astype(np.float64)
    return ox, oy, mask


def materialize_spatial_kernel(net: KernelNet, g_out: FiberElement, g_in: FiberElement, k: int,
                               disk_mask: bool = True) -> Tensor:
    """
    The k x k kernel connecting input fiber coordinate g_in to output coordinate g_out.

    Entry (a, b) is the net at spatial = g_in^-1 applied to the normalised offset
    and fiber = g_in^-1 g_out. The layout suits the cross-correlating conv2d.

    Returns:
        Tensor of shape (C_out, C_in, k, k)
    """
    ox, oy, mask = kernel_offsets(k)
    points = np.stack([ox, oy], axis=-1)
    spatial = Tensor(act_on_plane(inverse(g_in), points))
    rel = relative_element(g_in, g_out)
    fiber_embed = None
    if net.rotation_features:
        fiber_embed = Tensor(np.broadcast_to([np.cos(rel.theta), np.sin(rel.theta)], (k, k, 2)))
    mirror_rel = np.full((k, k), rel.mirror) if net.mirror_features else None
    values = eval_kernel(net, RelativeCoordinates(spatial, fiber_embed, mirror_rel))
    if disk_mask:
        values = values * Tensor(mask[:, :, None, None])
    return values.transpose(2, 3, 0, 1)


def _inverse_rotated_offsets(angles: Tensor, mirrors: np.ndarray, k: int):
    """Spatial parts g^-1 o for every sampled g: two tensors of shape (n, k, k)."""
    ox, oy, mask = kernel_offsets(k)
    cos = F.cos(angles).reshape(-1, 1, 1)
    sin = F.sin(angles).reshape(-1, 1, 1)
    m = Tensor(np.asarray(mirrors, dtype=np.float64).reshape(-1, 1, 1))
    x_rot = cos * Tensor(ox) + sin * Tensor(oy)
    y_rot = m * (cos * Tensor(oy) - sin * Tensor(ox))
    return x_rot, y_rot, mask


def lifting_kernel_bank(net: KernelNet, out_angles: Tensor, out_mirrors: np.ndarray, k: int,
                        disk_mask: bool = True) -> Tensor:
    """
    Stacked lifting kernels psi(u^-1 x) for every output coordinate u.

    Returns:
        Tensor of shape (C_out * n_out, C_in, k, k), channel-major
    """
    n_out = out_angles.shape[0]
    x_rot, y_rot, mask = _inverse_rotated_offsets(out_angles, out_mirrors, k)
    spatial = stack([x_rot, y_rot], axis=-1)
    values = eval_kernel(net, RelativeCoordinates(spatial))
    if disk_mask:
        values = values * Tensor(mask[None, :, :, None, None])
    bank = values.transpose(3, 0, 4, 1, 2)
    return bank.reshape(net.c_out * n_out, net.c_in, k, k)


def group_kernel_bank(net: KernelNet, out_angles: Tensor, out_mirrors: np.ndarray,
                      in_angles: Tensor, in_mirrors: np.ndarray, k: int, disk_mask: bool = True) -> Tensor:
    """
    Stacked group-conv kernels psi(v^-1 x, v^-1 u) for all (u, v) pairs.

    Returns:
        Tensor of shape (C_out * n_out, C_in * n_in, k, k), channel-major on both axes
    """
    n_out, n_in = out_angles.shape[0], in_angles.shape[0]
    shape = (n_out, n_in, k, k)
    x_rot, y_rot, mask = _inverse_rotated_offsets(in_angles, in_mirrors, k)
    spatial = stack([x_rot.reshape(1, n_in, k, k).broadcast_to(shape),
                     y_rot.reshape(1, n_in, k, k).broadcast_to(shape)], axis=-1)

    m_in = np.asarray(in_mirrors, dtype=np.float64)
    m_out = np.asarray(out_mirrors, dtype=np.float64)
    fiber_embed = None
    if net.rotation_features:
        rel_angle = (out_angles.reshape(n_out, 1) - in_angles.reshape(1, n_in)) * Tensor(m_in.reshape(1, n_in))
        rel_angle = rel_angle.reshape(n_out, n_in, 1, 1).broadcast_to(shape)
        fiber_embed = stack([F.cos(rel_angle), F.sin(rel_angle)], axis=-1)
    mirror_rel = None
    if net.mirror_features:
        mirror_rel = np.broadcast_to((m_out[:, None] * m_in[None, :])[:, :, None, None], shape)

    values = eval_kernel(net, RelativeCoordinates(spatial, fiber_embed, mirror_rel))
    if disk_mask:
        values = values * Tensor(mask[None, None, :, :, None, None])
    bank = values.transpose(4, 0, 5, 1, 2, 3)
    return bank.reshape(net.c_out * n_out, net.c_in * n_in, k, k)
