"""Optimized neural ops: hand-computed cases, oracle equivalence, and
algebraic laws."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hbonet import ops
from hbonet.ops import BatchNormParams
from hbonet.tensor import (
    ConvKernel,
    DimensionError,
    Tensor,
    UnsupportedKernelError,
    conv2d_oracle,
    tensor_equal_within,
)


class TestDepthwiseConv:
    def test_padding_pattern_hand_counted(self):
        """Ones kernel over a ones input: interior 9, edges 6, corners 4."""
        x = Tensor.full((1, 2, 4, 4), 1.0)
        w = ConvKernel(np.ones((2, 1, 3, 3)), groups=2)
        out = ops.depthwise_conv(x, w, stride=1)
        assert out.shape == (1, 2, 4, 4)
        for c in range(2):
            plane = out.data[0, c]
            assert plane[0, 0] == 4.0
            assert plane[0, 1] == 6.0
            assert plane[1, 1] == 9.0

    def test_stride2_halves_112_to_56(self):
        x = Tensor.zeros(1, 36, 112, 112)
        w = ConvKernel(np.zeros((36, 1, 3, 3)), groups=36)
        out = ops.depthwise_conv(x, w, stride=2)
        assert out.shape == (1, 36, 56, 56)

    def test_even_kernel_rejected(self):
        x = Tensor.zeros(1, 2, 4, 4)
        w = ConvKernel(np.zeros((2, 1, 4, 4)), groups=2)
        with pytest.raises(UnsupportedKernelError):
            ops.depthwise_conv(x, w)

    def test_group_mismatch(self):
        x = Tensor.zeros(1, 3, 4, 4)
        w = ConvKernel(np.zeros((2, 1, 3, 3)), groups=2)
        with pytest.raises(DimensionError):
            ops.depthwise_conv(x, w)

    @pytest.mark.parametrize("stride,k", [(1, 3), (2, 3), (1, 5), (2, 5)])
    def test_matches_oracle(self, stride, k):
        rng = np.random.default_rng(stride * 10 + k)
        x = Tensor(rng.normal(size=(2, 4, 9, 9)))
        w = ConvKernel(rng.normal(size=(4, 1, k, k)), groups=4)
        got = ops.depthwise_conv(x, w, stride=stride)
        want = conv2d_oracle(x, w, stride=stride, pad=(k - 1) // 2)
        assert tensor_equal_within(got, want, 1e-12)


class TestPointwiseConv:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 5, 3, 3)))
        w = ConvKernel(np.eye(5).reshape(5, 5, 1, 1))
        assert tensor_equal_within(ops.pointwise_conv(x, w), x, 0.0)

    def test_rgb_sum(self):
        r, g, b = 0.2, 0.5, 0.9
        x = np.empty((1, 3, 4, 4))
        x[0, 0], x[0, 1], x[0, 2] = r, g, b
        w = ConvKernel(np.ones((1, 3, 1, 1)))
        out = ops.pointwise_conv(Tensor(x), w)
        assert np.allclose(out.data, r + g + b)

    def test_matches_oracle(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(2, 6, 5, 5)))
        w = ConvKernel(rng.normal(size=(4, 6, 1, 1)))
        got = ops.pointwise_conv(x, w)
        want = conv2d_oracle(x, w, stride=1, pad=0)
        assert tensor_equal_within(got, want, 1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.pointwise_conv(Tensor.zeros(1, 3, 2, 2),
                               ConvKernel(np.zeros((2, 4, 1, 1))))


class TestDenseConv2d:
    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (3, 2)])
    def test_matches_oracle(self, stride, pad):
        rng = np.random.default_rng(stride * 7 + pad)
        x = Tensor(rng.normal(size=(2, 3, 8, 8)))
        w = ConvKernel(rng.normal(size=(5, 3, 3, 3)))
        got = ops.conv2d(x, w, stride=stride, pad=pad)
        want = conv2d_oracle(x, w, stride=stride, pad=pad)
        assert tensor_equal_within(got, want, 1e-12)

    def test_grouped_matches_oracle(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(1, 6, 6, 6)))
        w = ConvKernel(rng.normal(size=(4, 3, 3, 3)), groups=2)
        got = ops.conv2d(x, w, stride=1, pad=1)
        want = conv2d_oracle(x, w, stride=1, pad=1)
        assert tensor_equal_within(got, want, 1e-12)


class TestRelu6:
    def test_definition(self):
        x = Tensor(np.array([-1.0, 3.0, 8.0, 0.0]).reshape(1, 1, 1, 4))
        out = ops.relu6(x)
        assert out.data.ravel().tolist() == [0.0, 3.0, 6.0, 0.0]

    def test_identity_region(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.uniform(0, 6, size=(1, 2, 3, 3)))
        assert tensor_equal_within(ops.relu6(x), x, 0.0)


class TestBatchNorm:
    def test_identity_parameters_inference(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 3, 4, 4)))
        p = BatchNormParams.identity(3)
        out = ops.batchnorm(x, p, training=False)
        # only the eps in 1/sqrt(1 + eps) perturbs the identity
        assert np.max(np.abs(out.data - x.data)) <= 1e-5 * np.max(np.abs(x.data))

    def test_training_normalizes(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(3.0, 2.5, size=(8, 3, 6, 6)))
        p = BatchNormParams.identity(3)
        out = ops.batchnorm(x, p, training=True)
        mean = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        assert np.max(np.abs(mean)) < 1e-10
        assert np.max(np.abs(var - 1.0)) < 1e-4

    def test_training_updates_running_stats(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(2.0, 1.0, size=(8, 2, 4, 4)))
        p = BatchNormParams.identity(2)
        ops.batchnorm(x, p, training=True)
        batch_mean = x.data.mean(axis=(0, 2, 3))
        assert np.allclose(p.running_mean, 0.1 * batch_mean)

    def test_affine_law(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(4, 2, 3, 3)))
        p = BatchNormParams(gamma=np.full(2, 2.0), beta=np.full(2, 3.0))
        xhat = ops.batchnorm(x, BatchNormParams.identity(2), training=False)
        out = ops.batchnorm(x, p, training=False)
        assert np.max(np.abs(out.data - (2.0 * xhat.data + 3.0))) < 1e-12

    def test_inference_is_per_channel_affine(self):
        """bn(a*x) == a*bn(x) + (1-a)*shift with the closed-form shift."""
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 3, 4, 4))
        p = BatchNormParams(
            gamma=rng.normal(1, 0.2, 3), beta=rng.normal(size=3),
            running_mean=rng.normal(size=3), running_var=rng.uniform(0.5, 2, 3))
        a = 1.7
        lhs = ops.batchnorm(Tensor(a * x), p, training=False).data
        bnx = ops.batchnorm(Tensor(x), p, training=False).data
        shift = (p.beta - p.running_mean * p.gamma
                 / np.sqrt(p.running_var + p.eps))[None, :, None, None]
        assert np.max(np.abs(lhs - (a * bnx + (1 - a) * shift))) < 1e-12

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.batchnorm(Tensor.zeros(1, 3, 2, 2),
                          BatchNormParams.identity(2))


class TestBilinearUpsample:
    def test_factor_one_identity(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(1, 2, 5, 5)))
        assert tensor_equal_within(ops.bilinear_upsample(x, 1), x, 0.0)

    @pytest.mark.parametrize("factor", [2, 3, 4])
    def test_constant_preserved_exactly(self, factor):
        x = Tensor.full((1, 2, 4, 4), 2.5)
        out = ops.bilinear_upsample(x, factor)
        assert out.shape == (1, 2, 4 * factor, 4 * factor)
        assert np.all(out.data == 2.5)

    def test_2x2_factor2_hand_values(self):
        """Half-pixel-center interpolation of [[0,1],[2,3]], worked by hand:
        source coord (d + 0.5)/2 - 0.5 with border clamping gives 1-D weights
        [x0, .75x0+.25x1, .25x0+.75x1, x1] along each axis."""
        x = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2))
        out = ops.bilinear_upsample(x, 2)
        expected = np.array([
            [0.00, 0.25, 0.75, 1.00],
            [0.50, 0.75, 1.25, 1.50],
            [1.50, 1.75, 2.25, 2.50],
            [2.00, 2.25, 2.75, 3.00],
        ])
        assert np.max(np.abs(out.data[0, 0] - expected)) < 1e-15

    def test_corner_values_preserved(self):
        x = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2))
        out = ops.bilinear_upsample(x, 2).data[0, 0]
        assert (out[0, 0], out[0, -1], out[-1, 0], out[-1, -1]) == (0, 1, 2, 3)

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            ops.bilinear_upsample(Tensor.zeros(1, 1, 2, 2), 0)


class TestAvgPool:
    def test_global_pool_shape(self):
        x = Tensor.zeros(1, 1600, 7, 7)
        out = ops.avgpool(x, 7, 7)
        assert out.shape == (1, 1600, 1, 1)

    def test_constant_input(self):
        x = Tensor.full((1, 3, 6, 6), 1.25)
        out = ops.avgpool(x, 2, 2)
        assert np.all(out.data == 1.25)

    def test_2x2_mean(self):
        x = Tensor(np.array([[1.0, 3.0], [5.0, 7.0]]).reshape(1, 1, 2, 2))
        out = ops.avgpool(x, 2, 2)
        assert out.data.ravel().tolist() == [4.0]

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            ops.avgpool(Tensor.zeros(1, 1, 3, 3), 4, 1)


class TestChannelOps:
    def test_concat_shape(self):
        a, b = Tensor.zeros(1, 10, 4, 4), Tensor.zeros(1, 10, 4, 4)
        assert ops.concat_channels(a, b).shape == (1, 20, 4, 4)

    def test_eltadd_identity(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(2, 3, 4, 4)))
        out = ops.eltadd(x, Tensor.zeros(2, 3, 4, 4))
        assert tensor_equal_within(out, x, 0.0)

    def test_take_first_inverts_concat(self):
        rng = np.random.default_rng(10)
        a = Tensor(rng.normal(size=(1, 3, 4, 4)))
        b = Tensor(rng.normal(size=(1, 5, 4, 4)))
        back = ops.take_first_channels(ops.concat_channels(a, b), a.c)
        assert tensor_equal_within(back, a, 0.0)

    def test_spatial_mismatch(self):
        with pytest.raises(DimensionError):
            ops.concat_channels(Tensor.zeros(1, 2, 4, 4),
                                Tensor.zeros(1, 2, 5, 4))


@settings(max_examples=30, deadline=None)
@given(ca=st.integers(1, 6), cb=st.integers(1, 6), n=st.integers(1, 2),
       hw=st.integers(1, 5))
def test_concat_take_first_round_trip(ca, cb, n, hw):
    rng = np.random.default_rng(ca * 100 + cb * 10 + n + hw)
    a = Tensor(rng.normal(size=(n, ca, hw, hw)))
    b = Tensor(rng.normal(size=(n, cb, hw, hw)))
    cat = ops.concat_channels(a, b)
    assert tensor_equal_within(ops.take_first_channels(cat, ca), a, 0.0)
    assert cat.c == ca + cb
