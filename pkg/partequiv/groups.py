"""Point groups acting on the fiber axis of lifted feature maps.

The fiber groups are SO(2), the mirror group M = {+1, -1} and their
semidirect product O(2) = SO(2) ⋊ M. An element is stored as a rotation
angle in the canonical range [-pi, pi) and a mirror sign. Its matrix is
R(theta) @ diag(1, mirror), so mirroring acts before the rotation.

Image frame: the plane coordinate of pixel (row r, col c) is
(x, y) = (c - c0, r - r0) with (r0, c0) the image centre. diag(1, -1)
therefore reverses the row index (an up-down flip of the image).

Translations are never represented here; the spatial grid carries them.
"""
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from partequiv.constants import GroupKind
from partequiv.errors import get_error_message
from partequiv.utils.error_handling import GroupError

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Reduce an angle to the canonical range [-pi, pi)."""
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    wrapped -= math.pi
    # fmod rounding can land exactly on +pi
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    return wrapped


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorised wrap_angle for numpy arrays."""
    wrapped = np.mod(np.asarray(theta, dtype=np.float64) + np.pi, TWO_PI) - np.pi
    return np.where(wrapped >= np.pi, wrapped - TWO_PI, wrapped)


def angle_distance(a: float, b: float) -> float:
    """Shortest absolute angular distance between two angles."""
    return abs(wrap_angle(a - b))


@dataclass(frozen=True)
class FiberElement:
    """An element of the point group H: rotation angle plus mirror sign."""

    theta: float = 0.0
    mirror: int = 1

    def __post_init__(self):
        if self.mirror not in (1, -1):
            raise GroupError(f"mirror must be +1 or -1, got {self.mirror!r}")
        object.__setattr__(self, 'theta', wrap_angle(float(self.theta)))
        object.__setattr__(self, 'mirror', int(self.mirror))

    @classmethod
    def identity(cls) -> 'FiberElement':
        return cls(0.0, 1)

    @property
    def is_identity(self) -> bool:
        return self.mirror == 1 and self.theta == 0.0

    def matrix(self) -> np.ndarray:
        """2x2 matrix R(theta) @ diag(1, mirror) in float64."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s * self.mirror], [s, c * self.mirror]], dtype=np.float64)

    def is_close(self, other: 'FiberElement', atol: float = 1e-6) -> bool:
        """Compare two elements up to an angular tolerance."""
        return self.mirror == other.mirror and angle_distance(self.theta, other.theta) <= atol

    def __mul__(self, other: 'FiberElement') -> 'FiberElement':
        return compose(self, other)

    def __repr__(self):
        return f"FiberElement(theta={self.theta / math.pi:.4f}pi, mirror={self.mirror:+d})"


@dataclass(frozen=True)
class GroupSpec:
    """A fiber group: its kind and, for rotation groups, an optional discretisation.

    `discrete_n` selects the cyclic subgroup C_n for SO2 (or C_n x M for O2);
    None keeps the rotation part continuous.
    """

    kind: str
    discrete_n: Optional[int] = None

    def __post_init__(self):
        if not GroupKind.is_valid(self.kind):
            raise GroupError(get_error_message('UNKNOWN_GROUP', kind=self.kind))
        if self.discrete_n is not None:
            if self.kind not in (GroupKind.SO2, GroupKind.O2):
                raise GroupError(f"discrete_n only applies to rotation groups, got kind {self.kind}")
            if self.discrete_n < 1:
                raise GroupError(get_error_message('EMPTY_ENUMERATION', n=self.discrete_n))

    @property
    def has_rotations(self) -> bool:
        return self.kind in (GroupKind.SO2, GroupKind.O2)

    @property
    def has_mirror(self) -> bool:
        return self.kind in (GroupKind.MIRROR, GroupKind.O2)

    @property
    def is_continuous(self) -> bool:
        return self.has_rotations and self.discrete_n is None

    @property
    def fiber_dims(self) -> int:
        """Width of the relative-coordinate fiber embedding fed to kernel nets."""
        return (2 if self.has_rotations else 0) + (1 if self.has_mirror else 0)

    def mirror_flags(self) -> tuple:
        return (1, -1) if self.has_mirror else (1,)

    def order(self) -> Optional[int]:
        """Number of elements of a finite group, None for continuous groups."""
        if self.kind == GroupKind.TRIVIAL:
            return 1
        if self.kind == GroupKind.MIRROR:
            return 2
        if self.discrete_n is None:
            return None
        return self.discrete_n * len(self.mirror_flags())


def compose(a: FiberElement, b: FiberElement) -> FiberElement:
    """Group product a·b using the semidirect rule."""
    return FiberElement(a.theta + a.mirror * b.theta, a.mirror * b.mirror)


def inverse(g: FiberElement) -> FiberElement:
    """Group inverse. Mirrored elements are involutions."""
    if g.mirror == 1:
        return FiberElement(-g.theta, 1)
    return FiberElement(g.theta, -1)


def relative_element(g_in: FiberElement, g_out: FiberElement) -> FiberElement:
    """The relative element g_in^-1 · g_out evaluated by kernels."""
    return compose(inverse(g_in), g_out)


def act_on_plane(g: FiberElement, p) -> np.ndarray:
    """Apply g to planar point(s) p of shape (..., 2)."""
    points = np.asarray(p, dtype=np.float64)
    if points.shape[-1] != 2:
        raise GroupError(f"act_on_plane expects points of shape (..., 2), got {points.shape}")
    return points @ g.matrix().T


def exp_so2(algebra_coord: float) -> FiberElement:
    """Exponential map of SO(2); in the angle chart it is the identity (mod 2pi)."""
    return FiberElement(algebra_coord, 1)


def log_so2(g: FiberElement) -> float:
    """Logarithm of SO(2) in the angle chart."""
    if g.mirror != 1:
        raise GroupError(get_error_message('NOT_IDENTITY_COMPONENT', element=g))
    return g.theta


def enumerate_discrete(spec: GroupSpec, n: int) -> List[FiberElement]:
    """
    Enumerate a finite subgroup with n elements, identity first.

    Args:
        spec: The group to enumerate
        n: Number of elements. SO2 gives C_n; O2 gives C_{n/2} x M (n even);
           Mirror needs n = 2; Trivial needs n = 1.

    Returns:
        list of FiberElement closed under compose

    Raises:
        GroupError: If n < 1 or n is incompatible with the group
    """
    if n is None or n < 1:
        raise GroupError(get_error_message('EMPTY_ENUMERATION', n=n))

    if spec.kind == GroupKind.TRIVIAL:
        if n != 1:
            raise GroupError(get_error_message('BAD_ENUMERATION', kind=spec.kind, requirement='n = 1', n=n))
        return [FiberElement.identity()]

    if spec.kind == GroupKind.MIRROR:
        if n != 2:
            raise GroupError(get_error_message('BAD_ENUMERATION', kind=spec.kind, requirement='n = 2', n=n))
        return [FiberElement(0.0, 1), FiberElement(0.0, -1)]

    if spec.kind == GroupKind.SO2:
        return [FiberElement(TWO_PI * k / n, 1) for k in range(n)]

    if n % 2 != 0:
        raise GroupError(get_error_message('BAD_ENUMERATION', kind=spec.kind, requirement='an even n', n=n))
    n_rot = n // 2
    rotations = [TWO_PI * k / n_rot for k in range(n_rot)]
    return [FiberElement(t, m) for m in (1, -1) for t in rotations]


def haar_weights(n: int) -> np.ndarray:
    """Constant Monte Carlo weights 1/n for n samples of the fiber."""
    if n < 1:
        raise GroupError(get_error_message('EMPTY_ENUMERATION', n=n))
    return np.full(n, 1.0 / n)


def nearest_index(element: FiberElement, candidates: List[FiberElement]) -> int:
    """Index of the candidate closest to element, preferring matching mirror flags."""
    best_index, best_key = 0, None
    for index, candidate in enumerate(candidates):
        key = (candidate.mirror != element.mirror, angle_distance(candidate.theta, element.theta))
        if best_key is None or key < best_key:
            best_index, best_key = index, key
    return best_index
