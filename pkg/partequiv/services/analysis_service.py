"""Equivariance diagnostics: empirical errors, quadrature error formulas and the expectation test."""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.integrate import trapezoid

from partequiv.autodiff import Tensor, no_grad
from partequiv.constants import AnalysisName
from partequiv.distributions import (
    THETA_MAX, ProductDistribution, SubsetDistribution, UniformLieDistribution, build_distribution,
)
from partequiv.errors import get_error_message
from partequiv.groups import FiberElement, compose, inverse, wrap_angles
from partequiv.kernelnet import KernelNet, RelativeCoordinates, eval_kernel, lifting_kernel_bank
from partequiv.layers import group_conv, lifting_conv
from partequiv.utils.error_handling import AnalysisError, log_error_with_context, monitor_performance
from partequiv.utils.image_ops import is_grid_exact, transform_image

logger = logging.getLogger(__name__)

MIN_QUADRATURE_GRID = 512
# relative slack for bilinear interpolation at non-grid-exact angles
INTERPOLATION_RTOL = 0.05
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SubsetSpec:
    """A subset S of the fiber group: an arc [s_min, s_max) of rotations or an explicit element list."""

    s_min: float = -math.pi
    s_max: float = math.pi
    elements: Optional[Tuple[FiberElement, ...]] = None
    mirrors: Tuple[int, ...] = (1,)

    def __post_init__(self):
        if self.elements is not None:
            if not self.elements:
                raise AnalysisError("subset element list must not be empty")
        elif not (-math.pi <= self.s_min < self.s_max <= math.pi):
            raise AnalysisError(f"subset needs -pi <= s_min < s_max <= pi, got [{self.s_min}, {self.s_max})")

    @classmethod
    def full(cls) -> 'SubsetSpec':
        return cls()

    @classmethod
    def symmetric(cls, theta: float) -> 'SubsetSpec':
        return cls(-theta, theta)

    @property
    def is_discrete(self) -> bool:
        return self.elements is not None

    @property
    def is_full(self) -> bool:
        return not self.is_discrete and self.s_min <= -math.pi and self.s_max >= math.pi

    @property
    def length(self) -> float:
        return (self.s_max - self.s_min) * len(self.mirrors) if not self.is_discrete else float(len(self.elements))

    def contains(self, g: FiberElement, atol: float = 1e-9) -> bool:
        if self.is_discrete:
            return any(g.is_close(e) for e in self.elements)
        if g.mirror not in self.mirrors:
            return False
        if self.is_full:
            return True
        return self.s_min - atol <= g.theta < self.s_max - atol

    def grid(self, n: int) -> List[FiberElement]:
        """Deterministic coordinates covering the subset: arc midpoints per mirror flag."""
        if self.is_discrete:
            return list(self.elements)
        step = (self.s_max - self.s_min) / n
        return [FiberElement(self.s_min + (i + 0.5) * step, m) for m in self.mirrors for i in range(n)]


class QuadratureSignal:
    """
    A function on SO(2) evaluated at arbitrary angles, with a default grid resolution.

    `fn` maps an array of m angles to an array of shape (m, ...).
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], n_grid: int = MIN_QUADRATURE_GRID):
        self.fn = fn
        self.n_grid = n_grid

    def __call__(self, angles) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(angles, dtype=np.float64)), dtype=np.float64)

    @classmethod
    def from_samples(cls, values: np.ndarray) -> 'QuadratureSignal':
        """Periodic linear interpolation of values sampled on the grid -pi + 2 pi i / n."""
        values = np.asarray(values, dtype=np.float64)
        n = values.shape[0]
        grid = -math.pi + TWO_PI * np.arange(n) / n
        flat = values.reshape(n, -1)

        def fn(angles):
            columns = [np.interp(wrap_angles(angles), grid, flat[:, j], period=TWO_PI) for j in range(flat.shape[1])]
            return np.stack(columns, axis=-1).reshape((len(angles),) + values.shape[1:])

        return cls(fn, n)

    def grid(self) -> np.ndarray:
        return -math.pi + TWO_PI * np.arange(self.n_grid) / self.n_grid

    def samples(self) -> np.ndarray:
        return self(self.grid())

    def trapezoid_weights(self) -> np.ndarray:
        """Periodic trapezoidal weights; they sum to 2 pi."""
        return np.full(self.n_grid, TWO_PI / self.n_grid)


def _arc_integral(signal: QuadratureSignal, a: float, b: float, n: int) -> np.ndarray:
    """Richardson-extrapolated trapezoidal integral of signal over [a, b]."""
    fine_x = np.linspace(a, b, n + 1)
    coarse_x = np.linspace(a, b, n // 2 + 1)
    fine = trapezoid(signal(fine_x), fine_x, axis=0)
    coarse = trapezoid(signal(coarse_x), coarse_x, axis=0)
    return (4.0 * fine - coarse) / 3.0


def _require_rotation(w: FiberElement):
    if w.mirror != 1:
        raise AnalysisError(get_error_message('MIRROR_IN_CHART', element=w))


def _require_quadrature(n_grid: int, subset: SubsetSpec):
    if n_grid < MIN_QUADRATURE_GRID:
        raise AnalysisError(f"quadrature needs n_grid >= {MIN_QUADRATURE_GRID}, got {n_grid}")
    if subset.is_discrete:
        raise AnalysisError("quadrature error formulas need a continuous subset")


# *** probes ***
class LiftingProbe:
    """Lifting layer evaluated at arbitrary output coordinates."""

    def __init__(self, net: KernelNet, k: int, disk_mask: bool = True):
        self.net = net
        self.k = k
        self.disk_mask = disk_mask

    def __call__(self, image: np.ndarray, out_coords: Sequence[FiberElement]) -> np.ndarray:
        with no_grad():
            lifted = lifting_conv(image[None], self.net, out_coords, self.k, self.disk_mask)
        return lifted.values.data[0].astype(np.float64)

    def at_centre(self, image: np.ndarray, angles: np.ndarray) -> np.ndarray:
        """Responses at the image centre for pure rotations by `angles`: shape (m, C_out)."""
        c, h, w = image.shape
        r = self.k // 2
        padded = np.pad(image, ((0, 0), (r, r), (r, r)))
        rc, cc = h // 2 + r, w // 2 + r
        patch = padded[:, rc - r:rc + r + 1, cc - r:cc + r + 1]
        angles = np.asarray(angles, dtype=np.float64)
        with no_grad():
            bank = lifting_kernel_bank(self.net, Tensor(angles), np.ones(len(angles)), self.k, self.disk_mask)
        kernels = bank.data.astype(np.float64).reshape(self.net.c_out, len(angles), c, self.k, self.k)
        return np.einsum('omcij,cij->mo', kernels, patch)


class GroupConvProbe:
    """Lifting onto a fixed input grid, then group convolution onto any output coordinates."""

    def __init__(self, lift_net: KernelNet, conv_net: KernelNet, input_coords: Sequence[FiberElement],
                 k_lift: int, k_conv: int, disk_mask: bool = True):
        self.lift_net = lift_net
        self.conv_net = conv_net
        self.input_coords = list(input_coords)
        self.k_lift = k_lift
        self.k_conv = k_conv
        self.disk_mask = disk_mask

    def evaluate(self, image: np.ndarray, out_coords: Sequence[FiberElement],
                 input_coords: Sequence[FiberElement]) -> np.ndarray:
        with no_grad():
            lifted = lifting_conv(image[None], self.lift_net, input_coords, self.k_lift, self.disk_mask)
            out = group_conv(lifted, self.conv_net, out_coords, self.k_conv, self.disk_mask)
        return out.values.data[0].astype(np.float64)

    def __call__(self, image: np.ndarray, out_coords: Sequence[FiberElement]) -> np.ndarray:
        return self.evaluate(image, out_coords, self.input_coords)


class MonteCarloProbe(GroupConvProbe):
    """Group conv whose input coordinates are drawn from a distribution."""

    def __init__(self, lift_net: KernelNet, conv_net: KernelNet, dist: SubsetDistribution, n_in: int,
                 k_lift: int, k_conv: int, rng: Optional[np.random.Generator] = None, disk_mask: bool = True):
        super().__init__(lift_net, conv_net, [], k_lift, k_conv, disk_mask)
        self.dist = dist
        self.n_in = n_in
        self.rng = rng or np.random.default_rng(0)

    def draw(self, rng: np.random.Generator) -> List[FiberElement]:
        self.dist.train()
        with no_grad():
            return self.dist.sample(self.n_in, rng).elements

    def __call__(self, image: np.ndarray, out_coords: Sequence[FiberElement],
                 input_coords: Optional[Sequence[FiberElement]] = None) -> np.ndarray:
        if input_coords is None:
            input_coords = self.draw(self.rng)
        return self.evaluate(image, out_coords, input_coords)


class NetworkProbe:
    """Invariant class logits of a whole network."""

    invariant = True

    def __init__(self, model):
        self.model = model

    def __call__(self, image: np.ndarray, out_coords=None) -> np.ndarray:
        self.model.eval()
        with no_grad():
            logits = self.model(image[None])
        return logits.data[0].astype(np.float64)


Probe = Union[LiftingProbe, GroupConvProbe, MonteCarloProbe, NetworkProbe]


def _as_element(w) -> FiberElement:
    return w if isinstance(w, FiberElement) else FiberElement(float(w), 1)


# *** operations ***
def empirical_equiv_error(probe: Probe, f: np.ndarray, w, subset: SubsetSpec,
                          out_coords: Optional[Sequence[FiberElement]] = None, n_grid: int = 16) -> float:
    """
    ||L_w Phi(f) - Phi(L_w f)||^2 over the output coordinates inside `subset`.

    L_w Phi(f) at u is Phi(f) at w^-1 u, spatially transformed, and zero when
    w^-1 u leaves the subset. The sum is weighted by 1 / |U|.

    Args:
        probe: Layer or network under test
        f: Input image, C x H x W
        w: Transformation (FiberElement or rotation angle)
        subset: Output subset S
        out_coords: Output coordinates U; defaults to subset.grid(n_grid)
    """
    w = _as_element(w)
    f_w = transform_image(f, w)
    if getattr(probe, 'invariant', False):
        return float(np.sum((probe(f_w) - probe(f)) ** 2))

    coords = list(out_coords) if out_coords is not None else subset.grid(n_grid)
    inside = [u for u in coords if subset.contains(u)]
    if not inside:
        return 0.0
    sources = [compose(inverse(w), u) for u in inside]
    expected = transform_image(probe(f, sources), w)
    keep = np.array([subset.contains(s) for s in sources])
    expected[:, ~keep] = 0.0
    actual = probe(f_w, inside)
    return float(np.sum((actual - expected) ** 2) / len(coords))


def analytic_eps_out(phi: QuadratureSignal, subset: SubsetSpec, w) -> float:
    """
    Output-subset equivariance error ||int_S phi - int_{wS} phi||^2 by quadrature.

    Raises:
        AnalysisError: If w is mirrored or the grid is too coarse
    """
    w = _as_element(w)
    _require_rotation(w)
    _require_quadrature(phi.n_grid, subset)
    if subset.is_full:
        return 0.0
    inside = _arc_integral(phi, subset.s_min, subset.s_max, phi.n_grid)
    moved = _arc_integral(phi, subset.s_min + w.theta, subset.s_max + w.theta, phi.n_grid)
    return float(np.sum((inside - moved) ** 2))


def grid_eps_out(signal: QuadratureSignal, subset: SubsetSpec, w, n_grid: int) -> float:
    """Riemann-sum ε_out on the periodic grid of n_grid points."""
    w = _as_element(w)
    _require_rotation(w)
    grid = -math.pi + TWO_PI * np.arange(n_grid) / n_grid
    mask = np.array([subset.contains(FiberElement(u, 1)) for u in grid])
    points = grid[mask]
    if points.size == 0:
        return 0.0
    step = TWO_PI / n_grid
    difference = (signal(points) - signal(points + w.theta)).sum(axis=0) * step
    return float(np.sum(difference ** 2))


def analytic_eps_in(psi: QuadratureSignal, f: QuadratureSignal, subset_in: SubsetSpec, w,
                    chunk: int = 16) -> float:
    """
    Input-subset error ||int_G int_S psi(v^-1 u) [f(v) - f(w^-1 v)] dv du||^2.

    The outer integral runs over psi's periodic grid; the inner one over the
    arc with Richardson-extrapolated trapezoids. psi may be scalar-valued or
    return C_out x C_in matrices acting on C_in-valued f.
    """
    w = _as_element(w)
    _require_rotation(w)
    _require_quadrature(f.n_grid, subset_in)
    u = psi.grid()
    u_weight = TWO_PI / len(u)

    def level(n: int) -> np.ndarray:
        v = np.linspace(subset_in.s_min, subset_in.s_max, n + 1)
        v_weights = np.full(n + 1, (v[1] - v[0]))
        v_weights[[0, -1]] *= 0.5
        df = f(v) - f(v - w.theta)
        total = None
        for start in range(0, len(u), chunk):
            block = u[start:start + chunk]
            kernel = psi((block[:, None] - v[None, :]).ravel()).reshape((len(block), len(v)) + psi_shape)
            if kernel.ndim == 2:
                inner = np.einsum('um,m...->u...', kernel * v_weights, df)
            else:
                inner = np.einsum('umoc,m,mc->uo', kernel, v_weights, df)
            part = inner.sum(axis=0) * u_weight
            total = part if total is None else total + part
        return total

    psi_shape = psi(np.zeros(1)).shape[1:]
    fine = level(f.n_grid)
    coarse = level(f.n_grid // 2)
    return float(np.sum(((4.0 * fine - coarse) / 3.0) ** 2))


@dataclass
class ExpectationResult:
    statistic: float
    passed: bool
    fraction_within: float
    compared: int
    resamples: int


def expectation_equivariance_test(probe: MonteCarloProbe, f: np.ndarray, w, M: int,
                                  rng: np.random.Generator, out_coords: Sequence[FiberElement],
                                  atol: float = 1e-6, rtol: float = INTERPOLATION_RTOL) -> ExpectationResult:
    """
    Paired test that E[Phi(L_w f)] equals L_w E[Phi(f)] under resampling.

    Each resample draws one input sample set and feeds it to both branches.
    An element is within bounds when |mean difference| <= 3 SE + atol; the
    test passes when at least 99% of elements are. Grid-exact w compares all
    positions. Any other w compares only the image centre and widens the bound
    by rtol times the RMS of the transformed outputs, which absorbs the
    interpolation error of resampling f onto a rotated grid.

    Raises:
        AnalysisError: If M < 2
    """
    if M < 2:
        raise AnalysisError(get_error_message('TOO_FEW_RESAMPLES', m=M))
    if M < 100:
        logger.warning(f"Expectation test with only {M} resamples; at least 100 are recommended")
    w = _as_element(w)
    out_coords = list(out_coords)
    f_w = transform_image(f, w)
    sources = [compose(inverse(w), u) for u in out_coords]
    exact = is_grid_exact(f.shape[-2:], w)
    centre = (f.shape[-2] // 2, f.shape[-1] // 2)

    diffs, scale = [], []
    for _ in range(M):
        sample = probe.draw(rng)
        moved = transform_image(probe(f, sources, sample), w)
        direct = probe(f_w, out_coords, sample)
        d = direct - moved
        if not exact:
            d = d[..., centre[0], centre[1]]
            scale.append(moved[..., centre[0], centre[1]].ravel())
        diffs.append(d.ravel())

    D = np.stack(diffs)
    mean = D.mean(axis=0)
    se = D.std(axis=0, ddof=1) / math.sqrt(M)
    if not exact:
        atol = atol + rtol * float(np.sqrt(np.mean(np.square(scale))))
    within = np.abs(mean) <= 3.0 * se + atol
    with np.errstate(divide='ignore', invalid='ignore'):
        z = np.where(se > 0, np.abs(mean) / se, np.where(np.abs(mean) <= atol, 0.0, np.inf))
    statistic = float(z.max()) if z.size else 0.0
    fraction = float(within.mean()) if within.size else 1.0
    passed = fraction >= 0.99
    logger.info(f"Expectation test w={w}: max|z|={statistic:.3f}, within={fraction:.4f}, passed={passed}")
    return ExpectationResult(statistic, passed, fraction, int(D.shape[1]), M)


def equivariance_curve(probe: Probe, f: np.ndarray, subset: SubsetSpec, w_list: Sequence,
                       out_coords: Optional[Sequence[FiberElement]] = None, n_grid: int = 16
                       ) -> List[Tuple[float, float]]:
    """empirical_equiv_error over a list of transformations, as (angle, error) rows."""
    rows = []
    for w in w_list:
        element = _as_element(w)
        rows.append((element.theta, empirical_equiv_error(probe, f, element, subset, out_coords, n_grid)))
    return rows


# *** helpers ***
def orbit(w: FiberElement, limit: int = 64) -> List[FiberElement]:
    """The cyclic subgroup generated by w, identity first."""
    elements = [FiberElement.identity()]
    current = w
    while not current.is_close(elements[0]):
        elements.append(current)
        if len(elements) > limit:
            raise AnalysisError(get_error_message('NOT_CLOSED', element=w))
        current = compose(current, w)
    return elements


def smooth_test_image(size: int, rng: np.random.Generator, channels: int = 1, sigma: float = 1.0) -> np.ndarray:
    """A smooth random image masked to the inscribed disk, C x size x size, float32."""
    noise = rng.standard_normal((channels, size, size))
    smooth = np.stack([ndimage.gaussian_filter(plane, sigma) for plane in noise])
    centre = (size - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing='ij')
    disk = (rows - centre) ** 2 + (cols - centre) ** 2 <= (size / 2.0) ** 2
    return (smooth * disk).astype(np.float32)


def subset_of(dist: SubsetDistribution) -> SubsetSpec:
    """The subset a distribution's support covers (rotation part)."""
    if isinstance(dist, ProductDistribution):
        return subset_of(dist.rotation)
    if isinstance(dist, UniformLieDistribution):
        return SubsetSpec.symmetric(dist.theta_max) if dist.theta_max < THETA_MAX else SubsetSpec.full()
    return SubsetSpec.full()


def lifting_centre_signal(probe: LiftingProbe, image: np.ndarray, n_grid: int) -> QuadratureSignal:
    return QuadratureSignal(lambda angles: probe.at_centre(image, angles), n_grid)


def kernel_fiber_signal(net: KernelNet, n_grid: int) -> QuadratureSignal:
    """psi at spatial offset zero as a function of the relative rotation angle: (m, C_out, C_in)."""
    def fn(angles):
        m = len(angles)
        spatial = Tensor(np.zeros((m, 2)))
        fiber = Tensor(np.stack([np.cos(angles), np.sin(angles)], axis=-1)) if net.rotation_features else None
        mirror_rel = np.ones(m) if net.mirror_features else None
        with no_grad():
            return eval_kernel(net, RelativeCoordinates(spatial, fiber, mirror_rel)).data.astype(np.float64)

    return QuadratureSignal(fn, n_grid)


def write_rows_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


@dataclass
class AnalysisParams:
    """Parameters of `analyze` runs against a trained model."""

    w_list: Tuple[float, ...] = (0.0, math.pi / 2, math.pi, -math.pi / 2)
    mirror: bool = False
    resamples: int = 500
    n_grid: int = MIN_QUADRATURE_GRID
    image_size: Optional[int] = None
    inputs: int = 4
    seed: int = 0


@dataclass
class AnalysisReport:
    name: str
    header: Tuple[str, ...]
    rows: List[Tuple] = field(default_factory=list)
    passed: bool = True


class AnalysisService:
    """Runs the named analyses against a model loaded from a checkpoint."""

    @staticmethod
    @monitor_performance('analysis', threshold_ms=60000)
    def run(model, name: str, params: AnalysisParams) -> AnalysisReport:
        """
        Run one analysis.

        Returns:
            AnalysisReport with CSV header, rows and pass flag

        Raises:
            AnalysisError: For unknown analyses or invalid parameters
        """
        if name not in AnalysisName.all_analyses():
            raise AnalysisError(get_error_message('UNKNOWN_ANALYSIS', name=name,
                                                  allowed=AnalysisName.all_analyses()))
        rng = np.random.default_rng(params.seed)
        model.eval()
        w_elements = [FiberElement(t, -1 if params.mirror else 1) for t in params.w_list]
        try:
            if name == AnalysisName.CURVE:
                return AnalysisService._curve(model, w_elements, params, rng)
            if name == AnalysisName.EXPECTATION:
                return AnalysisService._expectation(model, w_elements, params, rng)
            if name == AnalysisName.EPS_OUT:
                return AnalysisService._eps_out(model, w_elements, params, rng)
            return AnalysisService._eps_in(model, w_elements, params, rng)
        except AnalysisError as e:
            log_error_with_context(e, {'analysis': name, 'params': params}, 'AnalysisService.run')
            raise

    @staticmethod
    def _curve(model, w_elements, params, rng) -> AnalysisReport:
        cfg = model.cfg
        size = params.image_size or 28
        probe = NetworkProbe(model)
        images = [smooth_test_image(size, rng, cfg.in_channels) for _ in range(params.inputs)]
        report = AnalysisReport(AnalysisName.CURVE, ('w', 'mirror', 'error'))
        for w in w_elements:
            errors = [empirical_equiv_error(probe, image, w, SubsetSpec.full()) for image in images]
            report.rows.append((w.theta, w.mirror, float(np.mean(errors))))
        return report

    @staticmethod
    def _expectation(model, w_elements, params, rng) -> AnalysisReport:
        cfg = model.cfg
        size = params.image_size or 9
        dist = build_distribution(cfg.group, learnable=False)
        conv_net = model.blocks[0].conv1.net if model.blocks else model.lifting.net
        probe = MonteCarloProbe(model.lifting.net, conv_net, dist, cfg.n_elements,
                                cfg.kernel_size_first, cfg.kernel_size, rng, cfg.disk_mask)
        image = smooth_test_image(size, rng, cfg.in_channels)
        report = AnalysisReport(AnalysisName.EXPECTATION, ('w', 'mirror', 'statistic', 'fraction_within', 'passed'))
        for w in w_elements:
            result = expectation_equivariance_test(probe, image, w, params.resamples, rng, orbit(w))
            report.rows.append((w.theta, w.mirror, result.statistic, result.fraction_within, int(result.passed)))
            report.passed = report.passed and result.passed
        return report

    @staticmethod
    def _eps_out(model, w_elements, params, rng) -> AnalysisReport:
        cfg = model.cfg
        probe = LiftingProbe(model.lifting.net, cfg.kernel_size_first, cfg.disk_mask)
        image = smooth_test_image(params.image_size or 28, rng, cfg.in_channels)
        phi = lifting_centre_signal(probe, image, params.n_grid)
        subset = subset_of(model.lifting.dist)
        report = AnalysisReport(AnalysisName.EPS_OUT, ('w', 'eps_out'))
        for w in w_elements:
            report.rows.append((w.theta, analytic_eps_out(phi, subset, w)))
        return report

    @staticmethod
    def _eps_in(model, w_elements, params, rng) -> AnalysisReport:
        cfg = model.cfg
        if not model.blocks:
            raise AnalysisError("eps-in needs a network with at least one group convolution")
        probe = LiftingProbe(model.lifting.net, cfg.kernel_size_first, cfg.disk_mask)
        image = smooth_test_image(params.image_size or 28, rng, cfg.in_channels)
        f = lifting_centre_signal(probe, image, params.n_grid)
        psi = kernel_fiber_signal(model.blocks[0].conv1.net, params.n_grid)
        subset = subset_of(model.lifting.dist)
        report = AnalysisReport(AnalysisName.EPS_IN, ('w', 'eps_in'))
        for w in w_elements:
            report.rows.append((w.theta, analytic_eps_in(psi, f, subset, w)))
        return report
