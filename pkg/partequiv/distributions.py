"""Learnable distributions over fiber elements.

A layer asks its distribution for a `FiberSample`: the group elements to
evaluate, their rotation angles as a differentiable tensor, and optional
per-element straight-through weights. Continuous factors are uniform on
[-theta_max, theta_max) via the reparameterisation theta_max * (2u - 1).
Discrete factors include each non-identity element independently through a
Gumbel-sigmoid relaxation with a hard forward pass; the identity is always
included.

Eval mode is deterministic: continuous factors return an equispaced grid
containing the identity, discrete factors include elements with p > 0.5.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from partequiv.autodiff import Module, Parameter, Tensor, concat
from partequiv.autodiff import functional as F
from partequiv.constants import GroupKind
from partequiv.errors import get_error_message
from partequiv.groups import FiberElement, GroupSpec, enumerate_discrete
from partequiv.utils.error_handling import DistributionError

logger = logging.getLogger(__name__)

THETA_MIN = 1e-3
# largest float32 not exceeding pi
THETA_MAX = float(np.nextafter(np.float32(np.pi), np.float32(0)))
MIRROR_ELEMENTS = [FiberElement(0.0, 1), FiberElement(0.0, -1)]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class FiberSample:
    """One draw of fiber coordinates for a layer."""

    elements: List[FiberElement]
    angles: Tensor
    mirrors: np.ndarray
    weights: Optional[Tensor] = None

    def __len__(self):
        return len(self.elements)

    @classmethod
    def constant(cls, elements: List[FiberElement], weights: Optional[Tensor] = None) -> 'FiberSample':
        angles = Tensor(np.array([g.theta for g in elements]))
        mirrors = np.array([g.mirror for g in elements], dtype=np.int64)
        return cls(list(elements), angles, mirrors, weights)


@dataclass
class DiscreteDraw:
    """Result of sample_discrete: included elements plus per-candidate weights."""

    included: List[FiberElement]
    mask: np.ndarray
    weights: Tensor


class SubsetDistribution(Module):
    """Common interface of all fiber distributions."""

    learnable = True

    def sample(self, n: int, rng: np.random.Generator) -> FiberSample:
        raise NotImplementedError

    def effective_sample_count(self, n_max: int) -> int:
        raise NotImplementedError

    def clamp_(self):
        pass

    def report(self) -> str:
        raise NotImplementedError

    def summary(self) -> Dict[str, float]:
        return {}


class IdentityDistribution(SubsetDistribution):
    """The trivial group: every draw is the identity alone."""

    learnable = False

    def sample(self, n: int, rng: np.random.Generator) -> FiberSample:
        return FiberSample.constant([FiberElement.identity()])

    def effective_sample_count(self, n_max: int) -> int:
        return 1

    def report(self) -> str:
        return "identity only"


class UniformLieDistribution(SubsetDistribution):
    """Uniform distribution on [-theta_max, theta_max) in the SO(2) angle chart."""

    def __init__(self, theta_init: float = THETA_MAX, learnable: bool = True):
        value = np.array([min(max(theta_init, THETA_MIN), THETA_MAX)])
        self.learnable = learnable
        self.theta = Parameter(value) if learnable else Tensor(value)

    @property
    def theta_max(self) -> float:
        return float(self.theta.data[0])

    def sample(self, n: int, rng: np.random.Generator) -> FiberSample:
        if self.training:
            return sample_continuous(self, n, rng)
        return self.grid(n)

    def grid(self, n: int) -> FiberSample:
        """Deterministic equispaced grid containing the identity; equals C_n at theta_max = pi."""
        if n < 1:
            raise DistributionError(get_error_message('BAD_SAMPLE_COUNT', op='grid', n=n))
        coeffs = (2 * np.arange(n) - n + (n % 2)) / n
        return _rotation_sample(self.theta, coeffs)

    def effective_sample_count(self, n_max: int) -> int:
        if n_max < 1:
            raise DistributionError(get_error_message('BAD_SAMPLE_COUNT', op='effective_sample_count', n=n_max))
        return max(1, _round_half_up(n_max * self.theta_max / math.pi))

    def clamp_(self):
        np.clip(self.theta.data, THETA_MIN, THETA_MAX, out=self.theta.data)

    def report(self) -> str:
        t = self.theta_max / math.pi
        suffix = ' (full)' if self.theta_max >= THETA_MAX else ''
        return f"range [−{t:.2f}π, {t:.2f}π]{suffix}"

    def summary(self) -> Dict[str, float]:
        return {'theta_max': self.theta_max}


class DiscreteInclusionDistribution(SubsetDistribution):
    """Independent inclusion probabilities sigmoid(logit_i) for g_1..g_n; e is always in."""

    def __init__(self, elements: List[FiberElement], temperature: float = 1.0, learnable: bool = True,
                 logit_init: float = 0.0):
        _check_elements(elements)
        if temperature <= 0:
            raise DistributionError(f"temperature must be positive, got {temperature}")
        self.elements = list(elements)
        self.temperature = temperature
        self.learnable = learnable
        logits = np.full(len(elements) - 1, logit_init)
        self.logits = Parameter(logits) if learnable else Tensor(logits)

    @property
    def probabilities(self) -> np.ndarray:
        """Inclusion probabilities (p_1..p_n); frozen distributions include everything."""
        if not self.learnable:
            return np.ones(len(self.elements) - 1)
        return 1.0 / (1.0 + np.exp(-self.logits.data.astype(np.float64)))

    @property
    def inclusion_fraction(self) -> float:
        return float((1.0 + self.probabilities.sum()) / len(self.elements))

    def sample(self, n: int, rng: np.random.Generator) -> FiberSample:
        if not self.learnable:
            return FiberSample.constant(self.elements)
        if not self.training:
            included = [self.elements[0]] + [g for g, p in zip(self.elements[1:], self.probabilities) if p > 0.5]
            return FiberSample.constant(included)
        draw = sample_discrete(self, self.elements, rng, hard=True)
        return FiberSample.constant(self.elements, weights=draw.weights)

    def effective_sample_count(self, n_max: int) -> int:
        if n_max < 1:
            raise DistributionError(get_error_message('BAD_SAMPLE_COUNT', op='effective_sample_count', n=n_max))
        return max(1, _round_half_up(n_max * self.inclusion_fraction))

    def report(self) -> str:
        parts = ['e:1.00'] + [f"g{i}:{p:.2f}" for i, p in enumerate(self.probabilities, start=1)]
        return "elements: " + ", ".join(parts)

    def summary(self) -> Dict[str, float]:
        return {f"p_{i}": float(p) for i, p in enumerate(self.probabilities, start=1)}


class ProductDistribution(SubsetDistribution):
    """p(g) = p(r) p(m) for O(2): a rotation factor and a mirror factor."""

    def __init__(self, rotation: SubsetDistribution, mirror: DiscreteInclusionDistribution, spec: GroupSpec):
        rotation_ok = isinstance(rotation, UniformLieDistribution) or (
            isinstance(rotation, DiscreteInclusionDistribution)
            and all(g.mirror == 1 for g in rotation.elements))
        mirror_ok = isinstance(mirror, DiscreteInclusionDistribution) and len(mirror.elements) == 2 \
            and mirror.elements[1].mirror == -1
        if spec.kind != GroupKind.O2 or not rotation_ok or not mirror_ok:
            factors = [type(rotation).__name__, type(mirror).__name__]
            raise DistributionError(get_error_message('FACTOR_MISMATCH', factors=factors, kind=spec.kind))
        self.rotation = rotation
        self.mirror = mirror
        self.learnable = rotation.learnable or mirror.learnable

    def sample(self, n: int, rng: np.random.Generator) -> FiberSample:
        return sample_product(self, n, rng)

    def rotation_count(self, n: int) -> int:
        return max(1, n // len(self.mirror.elements))

    def effective_sample_count(self, n_max: int) -> int:
        if n_max < 1:
            raise DistributionError(get_error_message('BAD_SAMPLE_COUNT', op='effective_sample_count', n=n_max))
        n_rot = self.rotation.effective_sample_count(self.rotation_count(n_max))
        n_mirror = len(self.mirror.elements) * self.mirror.inclusion_fraction
        return max(1, _round_half_up(n_rot * n_mirror))

    def clamp_(self):
        self.rotation.clamp_()
        self.mirror.clamp_()

    def report(self) -> str:
        return f"rotation {self.rotation.report()}; mirror {self.mirror.report()}"

    def summary(self) -> Dict[str, float]:
        values = {f"rotation.{k}": v for k, v in self.rotation.summary().items()}
        values.update({f"mirror.{k}": v for k, v in self.mirror.summary().items()})
        return values


def _check_elements(elements: List[FiberElement]):
    if not elements:
        raise DistributionError(get_error_message('NO_ELEMENTS'))
    if not elements[0].is_identity:
        raise DistributionError(get_error_message('IDENTITY_FIRST', element=elements[0]))


def _rotation_sample(theta: Tensor, coeffs: np.ndarray) -> FiberSample:
    angles = theta * Tensor(coeffs)
    theta_value = float(theta.data[0])
    elements = [FiberElement(theta_value * c, 1) for c in coeffs]
    return FiberSample(elements, angles, np.ones(len(coeffs), dtype=np.int64))


def sample_continuous(dist: UniformLieDistribution, n: int, rng: np.random.Generator,
                      noise: Optional[np.ndarray] = None) -> FiberSample:
    """
    Draw n angles theta_max * (2u - 1) with u ~ U[0, 1).

    Args:
        dist: The distribution
        n: Number of samples (>= 1)
        rng: Random generator; unused when `noise` is given
        noise: Optional fixed u values, for frozen-noise gradient checks

    Returns:
        FiberSample whose angles carry the gradient path to theta_max
    """
    if n < 1:
        raise DistributionError(get_error_message('BAD_SAMPLE_COUNT', op='sample_continuous', n=n))
    u = rng.random(n) if noise is None else np.asarray(noise, dtype=np.float64)
    return _rotation_sample(dist.theta, 2.0 * u - 1.0)


def sample_discrete(dist: DiscreteInclusionDistribution, elements: List[FiberElement],
                    rng: np.random.Generator, hard: bool = True) -> DiscreteDraw:
    """
    Gumbel-sigmoid inclusion of each non-identity element.

    With hard=True the forward weights are 0/1 and gradients use the relaxed
    weights; with hard=False the relaxed weights are used in both passes.

    Raises:
        DistributionError: If elements is empty or does not start with the identity
    """
    _check_elements(elements)
    n = len(elements) - 1
    if n != dist.logits.shape[0]:
        raise DistributionError(f"expected {dist.logits.shape[0] + 1} elements, got {len(elements)}")
    identity_weight = Tensor(np.ones(1))
    if n == 0:
        return DiscreteDraw([elements[0]], np.ones(1, dtype=bool), identity_weight)

    # difference of two Gumbel variables is logistic
    noise = rng.logistic(size=n)
    soft = F.sigmoid((dist.logits + Tensor(noise)) * (1.0 / dist.temperature))
    mask = soft.data > 0.5
    weights = F.straight_through(mask.astype(soft.dtype), soft) if hard else soft
    full_mask = np.concatenate([[True], mask])
    included = [g for g, keep in zip(elements, full_mask) if keep]
    return DiscreteDraw(included, full_mask, concat([identity_weight, weights]))


def sample_product(dist: ProductDistribution, n: int, rng: np.random.Generator) -> FiberSample:
    """
    Joint samples r_i composed with each mirror element, mirror-major order.

    Args:
        dist: Product of a rotation factor and a mirror factor
        n: Total requested samples; the rotation factor gets n // 2
        rng: Random generator
    """
    if n < 1:
        raise DistributionError(get_error_message('BAD_SAMPLE_COUNT', op='sample_product', n=n))
    rot = dist.rotation.sample(dist.rotation_count(n), rng)
    mir = dist.mirror.sample(len(dist.mirror.elements), rng)

    elements, mirror_flags = [], []
    for s in mir.elements:
        for g in rot.elements:
            elements.append(FiberElement(g.theta, g.mirror * s.mirror))
            mirror_flags.append(g.mirror * s.mirror)
    angles = concat([rot.angles] * len(mir))

    weights = None
    if rot.weights is not None or mir.weights is not None:
        rot_w = rot.weights if rot.weights is not None else Tensor(np.ones(len(rot)))
        mir_w = mir.weights if mir.weights is not None else Tensor(np.ones(len(mir)))
        weights = (mir_w.reshape(len(mir), 1) * rot_w.reshape(1, len(rot))).reshape(-1)
    return FiberSample(elements, angles, np.array(mirror_flags, dtype=np.int64), weights)


def build_distribution(spec: GroupSpec, learnable: bool, temperature: float = 1.0) -> SubsetDistribution:
    """The distribution a layer of the given group starts from: full support."""
    if spec.kind == GroupKind.TRIVIAL:
        return IdentityDistribution()
    if spec.kind == GroupKind.MIRROR:
        return DiscreteInclusionDistribution(MIRROR_ELEMENTS, temperature, learnable, logit_init=_full_logit(learnable))

    if spec.discrete_n is None:
        rotation = UniformLieDistribution(THETA_MAX, learnable)
    else:
        cyclic = enumerate_discrete(GroupSpec(GroupKind.SO2), spec.discrete_n)
        rotation = DiscreteInclusionDistribution(cyclic, temperature, learnable, logit_init=_full_logit(learnable))
    if spec.kind == GroupKind.SO2:
        return rotation
    mirror = DiscreteInclusionDistribution(MIRROR_ELEMENTS, temperature, learnable, logit_init=_full_logit(learnable))
    return ProductDistribution(rotation, mirror, spec)


def _full_logit(learnable: bool) -> float:
    # sigmoid(4) ~ 0.98
    return 4.0 if learnable else 0.0
