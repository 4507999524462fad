"""Tests for lifting, group and partial group convolutions."""
import math

import numpy as np
import pytest

from partequiv.autodiff import Tensor
from partequiv.constants import GroupKind
from partequiv.distributions import (
    DiscreteInclusionDistribution, FiberSample, UniformLieDistribution, build_distribution,
)
from partequiv.groups import FiberElement, GroupSpec, enumerate_discrete
from partequiv.kernelnet import KernelNet
from partequiv.layers import (
    FiberBatchNorm, GroupConvLayer, LiftedFeatureMap, LiftingLayer, ResBlock, fiber_maxpool, fiber_relu, group_conv,
    lifting_conv, partial_group_conv, project_fiber,
)
from partequiv.services.analysis_service import GroupConvProbe, LiftingProbe, SubsetSpec, empirical_equiv_error
from partequiv.utils.error_handling import ShapeError
from tests.conftest import disk_image

C4 = enumerate_discrete(GroupSpec(GroupKind.SO2), 4)
D4 = enumerate_discrete(GroupSpec(GroupKind.O2), 8)


def lifted(rng, coords, b=2, c=2, size=9):
    values = Tensor(rng.standard_normal((b, c, len(coords), size, size)))
    sample = FiberSample.constant(coords)
    return LiftedFeatureMap(values, sample.elements, sample.angles, sample.mirrors)


class TestLiftedFeatureMap:
    """Test feature-map validation."""

    def test_empty_coords_raise(self):
        """Test a feature map needs at least one fiber coordinate."""
        with pytest.raises(ShapeError, match='at least one'):
            LiftedFeatureMap(Tensor(np.zeros((1, 1, 0, 3, 3))), [], Tensor(np.zeros(0)), np.zeros(0))

    def test_fiber_length_mismatch(self, rng):
        """Test the fiber axis must match the coordinate list."""
        sample = FiberSample.constant(C4[:2])
        with pytest.raises(ShapeError):
            LiftedFeatureMap(Tensor(np.zeros((1, 1, 3, 3, 3))), sample.elements, sample.angles, sample.mirrors)


class TestLiftingConv:
    """Test the lifting convolution."""

    def test_output_shape(self, rng):
        """Test B x C_in x H x W lifts to B x C_out x n x H x W."""
        net = KernelNet(3, 2, rng, hidden=8)
        out = lifting_conv(rng.standard_normal((2, 2, 9, 9)), net, C4, k=5)
        assert out.values.shape == (2, 3, 4, 9, 9)
        assert out.n_fiber == 4

    def test_rank_check(self, rng):
        """Test unbatched images are rejected."""
        with pytest.raises(ShapeError, match='4-dimensional'):
            lifting_conv(np.zeros((1, 9, 9)), KernelNet(1, 1, rng), C4, k=3)

    def test_empty_output_coords(self, rng):
        """Test an empty coordinate list is rejected."""
        with pytest.raises(ShapeError):
            lifting_conv(np.zeros((1, 1, 9, 9)), KernelNet(1, 1, rng), [], k=3)

    def test_weights_scale_slices(self, rng):
        """Test straight-through weights multiply their fiber slices."""
        net = KernelNet(1, 1, rng, hidden=8)
        sample = FiberSample.constant(C4[:2], weights=Tensor([1.0, 0.0]))
        out = lifting_conv(rng.standard_normal((1, 1, 7, 7)), net, sample, k=3)
        assert np.all(out.values.data[:, :, 1] == 0.0)
        assert np.any(out.values.data[:, :, 0] != 0.0)

    @pytest.mark.parametrize('w', C4)
    def test_c4_equivariance(self, rng, w):
        """Test lifting onto C4 is exactly equivariant to quarter turns."""
        probe = LiftingProbe(KernelNet(2, 1, rng, hidden=8), k=5)
        image = disk_image(rng, 13, 5.5)
        err = empirical_equiv_error(probe, image, w, SubsetSpec.full(), out_coords=C4)
        assert err < 1e-8

    def test_mirror_equivariance(self, rng):
        """Test lifting onto the dihedral group commutes with the row flip."""
        probe = LiftingProbe(KernelNet(2, 1, rng, hidden=8), k=5)
        image = disk_image(rng, 13, 5.5)
        subset = SubsetSpec(mirrors=(1, -1))
        err = empirical_equiv_error(probe, image, FiberElement(0.0, -1), subset, out_coords=D4)
        assert err < 1e-8


class TestGroupConv:
    """Test group and partial group convolutions."""

    def test_channel_mismatch(self, rng):
        """Test the input channels must match the kernel net."""
        net = KernelNet.for_group(GroupSpec(GroupKind.SO2), 2, 3, rng)
        with pytest.raises(ShapeError):
            group_conv(lifted(rng, C4, c=2), net, C4, k=3)

    def test_output_coords_follow_request(self, rng):
        """Test outputs live on the requested coordinates, independent of the input fiber."""
        net = KernelNet.for_group(GroupSpec(GroupKind.SO2), 3, 2, rng, hidden=8)
        out = group_conv(lifted(rng, C4), net, C4[:3], k=3)
        assert out.values.shape == (2, 3, 3, 9, 9)
        assert out.fiber_coords == C4[:3]

    @pytest.mark.parametrize('w', C4[1:])
    def test_c4_equivariance(self, rng, w):
        """Test lifting then group conv on C4 is exactly equivariant."""
        spec = GroupSpec(GroupKind.SO2)
        probe = GroupConvProbe(KernelNet(2, 1, rng, hidden=8), KernelNet.for_group(spec, 2, 2, rng, hidden=8),
                               C4, k_lift=5, k_conv=3)
        image = disk_image(rng, 13, 5.5)
        err = empirical_equiv_error(probe, image, w, SubsetSpec.full(), out_coords=C4)
        assert err < 1e-8

    def test_truncated_output_subset_breaks_equivariance(self, rng):
        """Test restricting outputs to a quarter of the circle leaves a non-zero error."""
        spec = GroupSpec(GroupKind.SO2)
        probe = GroupConvProbe(KernelNet(2, 1, rng, hidden=8), KernelNet.for_group(spec, 2, 2, rng, hidden=8),
                               C4, k_lift=5, k_conv=3)
        image = disk_image(rng, 13, 5.5)
        subset = SubsetSpec(-math.pi / 4, math.pi / 4 + 0.1)
        err = empirical_equiv_error(probe, image, math.pi / 2, subset, out_coords=C4)
        assert err > 1e-9

    def test_partial_conv_draws_from_distribution(self, rng):
        """Test partial conv samples n_out output coordinates inside the distribution support."""
        net = KernelNet.for_group(GroupSpec(GroupKind.SO2), 2, 2, rng, hidden=8)
        dist = UniformLieDistribution(math.pi / 4)
        out = partial_group_conv(lifted(rng, C4), net, dist, 5, rng, k=3)
        assert out.n_fiber == 5
        assert all(abs(g.theta) <= math.pi / 4 + 1e-6 for g in out.fiber_coords)

    def test_gradient_reaches_theta(self, rng):
        """Test the layer loss differentiates through sampled angles to theta_max."""
        net = KernelNet.for_group(GroupSpec(GroupKind.SO2), 2, 2, rng, hidden=8)
        layer = GroupConvLayer(net, UniformLieDistribution(2.0), n_max=4, k=3)
        out = layer(lifted(rng, C4), rng)
        (out.values * out.values).sum().backward()
        assert layer.dist.theta.grad is not None
        assert layer.dist.theta.grad[0] != 0.0


class TestLayerModules:
    """Test layer wrappers and helpers."""

    def test_lifting_layer_uses_effective_count(self, rng):
        """Test a half-range distribution draws half of N."""
        layer = LiftingLayer(KernelNet(2, 1, rng, hidden=8), UniformLieDistribution(math.pi / 2), n_max=8, k=3)
        out = layer(rng.standard_normal((1, 1, 7, 7)), rng)
        assert out.n_fiber == 4

    def test_project_fiber_identity(self, rng):
        """Test projecting onto the same coordinates returns the values unchanged."""
        fmap = lifted(rng, C4)
        assert project_fiber(fmap, C4) is fmap.values

    def test_project_fiber_nearest(self, rng):
        """Test projection picks the nearest input coordinate."""
        fmap = lifted(rng, C4)
        out = project_fiber(fmap, [FiberElement(math.pi / 2 + 0.1)])
        assert np.array_equal(out.data[:, :, 0], fmap.values.data[:, :, 1])

    def test_fiber_maxpool(self, rng):
        """Test pooling halves space and keeps the fiber."""
        assert fiber_maxpool(lifted(rng, C4)).values.shape == (2, 2, 4, 4, 4)

    def test_resblock_keeps_shape(self, rng):
        """Test a residual block maps C channels on C4 to C channels on C4."""
        spec = GroupSpec(GroupKind.SO2, discrete_n=4)

        def conv():
            return GroupConvLayer(KernelNet.for_group(spec, 2, 2, rng, hidden=8),
                                  build_distribution(spec, learnable=False), n_max=4, k=3)

        block = ResBlock(2, conv(), conv())
        record = []
        out = block(lifted(rng, C4), rng, record, 'block0.')
        assert out.values.shape == (2, 2, 4, 9, 9)
        assert [name for name, _ in record] == ['block0.conv1', 'block0.conv2']


def masked(values, sample):
    return LiftedFeatureMap(Tensor(values), sample.elements, sample.angles, sample.mirrors, sample.weights)


class TestInclusionMasking:
    """Test straight-through masked fibers compute the same operator as the included subset."""

    KEEP = [0, 1, 3]

    @pytest.fixture
    def dist(self):
        dist = DiscreteInclusionDistribution(C4)
        dist.logits.data[:] = [20.0, -20.0, 20.0]
        return dist

    def test_training_sample_keeps_every_element(self, dist, rng):
        """Test training draws carry all elements with 0/1 weights, eval draws only the included ones."""
        sample = dist.train().sample(4, rng)
        assert sample.elements == C4
        assert np.allclose(sample.weights.data, [1.0, 1.0, 0.0, 1.0])
        assert dist.eval().sample(4, rng).elements == [C4[i] for i in self.KEEP]

    def test_mask_properties(self, dist, rng):
        """Test the map exposes which slices are included."""
        fmap = masked(rng.standard_normal((1, 1, 4, 3, 3)), dist.sample(4, rng))
        assert fmap.is_masked
        assert fmap.included.tolist() == [True, True, False, True]
        assert fmap.fiber_mask().shape == (1, 1, 4, 1, 1)
        assert not lifted(rng, C4).is_masked

    def test_pointwise_ops_keep_excluded_slices_zero(self, dist, rng):
        """Test ReLU after a shift leaves excluded slices at zero."""
        fmap = masked(rng.standard_normal((2, 2, 4, 5, 5)), dist.sample(4, rng))
        out = fiber_relu(fmap.with_values(fmap.values + 1.0))
        assert np.allclose(out.values.data[:, :, 2], 0.0)
        assert out.is_masked

    def test_masked_convolutions_match_subset(self, dist, rng):
        """Test lifting then group conv on a masked fiber equals the same on the included subset."""
        lift_net = KernelNet(3, 1, rng, hidden=8)
        conv_net = KernelNet.for_group(GroupSpec(GroupKind.SO2), 2, 3, rng, hidden=8)
        image = disk_image(rng, 11, 4.5)[None]
        train_sample = dist.train().sample(4, rng)
        eval_sample = dist.eval().sample(4, rng)

        train_out = group_conv(lifting_conv(image, lift_net, train_sample, k=5), conv_net, train_sample, k=3)
        eval_out = group_conv(lifting_conv(image, lift_net, eval_sample, k=5), conv_net, eval_sample, k=3)
        assert np.flatnonzero(train_out.included).tolist() == self.KEEP
        assert np.allclose(train_out.values.data[:, :, self.KEEP], eval_out.values.data, atol=1e-5)
        assert np.allclose(train_out.values.data[:, :, 2], 0.0)

    def test_batchnorm_matches_subset(self, dist, rng):
        """Test training-mode fiber batch norm pools over the included slices only."""
        values = rng.standard_normal((2, 3, 4, 5, 5)) + 3.0
        subset = FiberSample.constant([C4[i] for i in self.KEEP])
        bn_masked, bn_subset = FiberBatchNorm(3), FiberBatchNorm(3)

        out = bn_masked(masked(values, dist.sample(4, rng)))
        expected = bn_subset(masked(values[:, :, self.KEEP], subset))
        assert np.allclose(out.values.data[:, :, self.KEEP], expected.values.data, atol=1e-5)
        assert np.allclose(out.values.data[:, :, 2], 0.0)
        assert np.allclose(bn_masked.running_var, bn_subset.running_var, atol=1e-5)

    def test_projection_skips_excluded_coordinates(self, dist, rng):
        """Test the skip projection only reads included slices."""
        fmap = masked(rng.standard_normal((1, 2, 4, 3, 3)), dist.sample(4, rng))
        out = project_fiber(fmap, [FiberElement(-math.pi + 0.3)])
        assert np.array_equal(out.data[:, :, 0], fmap.values.data[:, :, 3])
