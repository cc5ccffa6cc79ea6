"""Block behavior: channel rounding, shape laws, the copied-shortcut law,
and the compositional oracle (block forward versus a straight-line chain of
the primitive ops wired independently in this file)."""
import numpy as np
import pytest

from hbonet import ops
from hbonet.autodiff import Tape
from hbonet.blocks import (
    BlockConfig,
    BlockKind,
    ConfigError,
    block_layer_table,
    harmonious_bottleneck_forward,
    hbo_forward_node,
    init_block_params,
    inverted_residual_forward,
    make_divisible,
)
from hbonet.tensor import Tensor, tensor_equal_within

HBO = BlockKind.HARMONIOUS_BOTTLENECK
INV = BlockKind.INVERTED_RESIDUAL


class TestMakeDivisible:
    def test_already_multiple(self):
        assert make_divisible(36 * 0.5, 2) == 18

    def test_rounds_up_under_90_percent(self):
        assert make_divisible(20 * 0.35, 4) == 8

    def test_never_below_divisor(self):
        assert make_divisible(1.2, 8) == 8

    def test_rounds_down_within_90_percent(self):
        # 76.8 -> 72 (72 >= 0.9 * 76.8); 100.8 -> 96
        assert make_divisible(96 * 0.8, 8) == 72
        assert make_divisible(288 * 0.35, 8) == 96

    def test_bad_divisor(self):
        with pytest.raises(ValueError):
            make_divisible(10, 3)


class TestBlockConfig:
    def test_odd_c_out_rejected(self):
        with pytest.raises(ConfigError):
            BlockConfig(8, 7, 2, 1, HBO)

    def test_inverted_residual_rule(self):
        assert BlockConfig(8, 8, 2, 1, INV).use_residual
        assert not BlockConfig(8, 8, 2, 2, INV).use_residual
        assert not BlockConfig(8, 10, 2, 1, INV).use_residual

    def test_shortcut_clipped_to_input_width(self):
        cfg = BlockConfig(72, 152, 2, 2, HBO)
        assert cfg.shortcut_width == 72
        assert cfg.main_width == 80
        assert not cfg.use_residual

    def test_residual_flag_override(self):
        cfg = BlockConfig(8, 8, 2, 1, HBO, residual=False)
        assert not cfg.use_residual


class TestLayerTable:
    def test_hbo_shapes_follow_config(self):
        cfg = BlockConfig(20, 36, 2, 1, HBO)
        table = {s.name: s for s in block_layer_table(cfg)}
        assert table["contract_dw"].weight_shape() == (20, 1, 5, 5)
        assert table["expand_pw"].weight_shape() == (40, 20, 1, 1)
        assert table["body_dw"].weight_shape() == (40, 1, 3, 3)
        assert table["reduce_pw"].weight_shape() == (18, 40, 1, 1)
        assert table["smooth_dw"].weight_shape() == (18, 1, 5, 5)

    def test_stride2_uses_3x3_smoothing(self):
        cfg = BlockConfig(36, 72, 2, 2, HBO)
        table = {s.name: s for s in block_layer_table(cfg)}
        assert table["smooth_dw"].kernel == 3

    def test_expansion_kept_at_t1(self):
        cfg = BlockConfig(32, 20, 1, 1, HBO)
        table = {s.name: s for s in block_layer_table(cfg)}
        assert table["expand_pw"].weight_shape() == (32, 32, 1, 1)

    def test_inverted_residual_skips_expand_at_t1(self):
        cfg = BlockConfig(32, 16, 1, 1, INV)
        names = [s.name for s in block_layer_table(cfg)]
        assert names == ["body_dw", "reduce_pw"]

    def test_cascade_layers_are_linear(self):
        cfg = BlockConfig(8, 8, 2, 1, HBO, contraction_count=2)
        table = {s.name: s for s in block_layer_table(cfg)}
        assert not table["casc2_dw"].act and not table["casc2_pw"].act
        assert table["casc2_dw"].stride == 2

    def test_params_match_table(self):
        cfg = BlockConfig(6, 8, 2, 2, HBO)
        p = init_block_params(cfg, np.random.default_rng(0))
        for spec in block_layer_table(cfg):
            assert p.layers[spec.name].kernel.shape == spec.weight_shape()
            assert (p.layers[spec.name].bn is not None) == spec.bn


class TestShapes:
    def test_stride1_shape_112_20_to_36(self):
        cfg = BlockConfig(20, 36, 2, 1, HBO)
        p = init_block_params(cfg, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(1, 20, 112, 112)))
        assert harmonious_bottleneck_forward(x, cfg, p).shape == (1, 36, 112, 112)

    def test_stride2_shape_112_36_to_72(self):
        cfg = BlockConfig(36, 72, 2, 2, HBO)
        p = init_block_params(cfg, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(1, 36, 112, 112)))
        assert harmonious_bottleneck_forward(x, cfg, p).shape == (1, 72, 56, 56)

    def test_inverted_residual_14_144_t6_200_s2(self):
        cfg = BlockConfig(144, 200, 6, 2, INV)
        p = init_block_params(cfg, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(1, 144, 14, 14)))
        assert inverted_residual_forward(x, cfg, p).shape == (1, 200, 7, 7)

    @pytest.mark.parametrize("stride,k,hw", [(1, 1, 8), (1, 2, 8), (2, 1, 8),
                                             (2, 2, 16), (1, 3, 16)])
    def test_stride_law(self, stride, k, hw):
        cfg = BlockConfig(6, 8, 2, stride, HBO, contraction_count=k)
        p = init_block_params(cfg, np.random.default_rng(k))
        x = Tensor(np.random.default_rng(0).normal(size=(2, 6, hw, hw)))
        out = harmonious_bottleneck_forward(x, cfg, p)
        assert out.shape == (2, 8, hw // stride, hw // stride)

    def test_spatial_divisibility_error(self):
        cfg = BlockConfig(4, 4, 2, 1, HBO, contraction_count=2)
        p = init_block_params(cfg, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(0).normal(size=(1, 4, 6, 6)))
        with pytest.raises(ConfigError):
            harmonious_bottleneck_forward(x, cfg, p)


class TestChannelLaw:
    """Exactly c_out/2 output channels are computed; the rest are copies."""

    def test_stride1_shortcut_is_pure_copy(self):
        cfg = BlockConfig(8, 8, 2, 1, HBO)
        p = init_block_params(cfg, zero=True)
        x = Tensor(np.random.default_rng(2).normal(size=(2, 8, 8, 8)))
        out = harmonious_bottleneck_forward(x, cfg, p)
        assert np.all(out.data[:, :4] == 0.0)          # main half: zero weights
        assert np.array_equal(out.data[:, 4:], x.data[:, :4])

    def test_stride2_shortcut_is_pooled_copy(self):
        cfg = BlockConfig(8, 8, 2, 2, HBO)
        p = init_block_params(cfg, zero=True)
        x = Tensor(np.random.default_rng(3).normal(size=(2, 8, 8, 8)))
        out = harmonious_bottleneck_forward(x, cfg, p)
        pooled = ops.avgpool(x, 2, 2)
        assert np.all(out.data[:, :4] == 0.0)
        assert np.array_equal(out.data[:, 4:], pooled.data[:, :4])

    def test_inverted_residual_passthrough(self):
        cfg = BlockConfig(6, 6, 2, 1, INV)
        p = init_block_params(cfg, zero=True)
        x = Tensor(np.random.default_rng(4).normal(size=(1, 6, 5, 5)))
        out = inverted_residual_forward(x, cfg, p)
        assert tensor_equal_within(out, x, 0.0)


def compose_hbo_from_primitives(x, cfg, p):
    """Straight-line re-wiring of the block from the public eager ops."""
    def conv_bn_act(t, name):
        spec = {s.name: s for s in block_layer_table(cfg)}[name]
        lp = p.layers[name]
        if spec.kind == "depthwise":
            t = ops.depthwise_conv(t, lp.kernel, stride=spec.stride)
        else:
            t = ops.pointwise_conv(t, lp.kernel)
        if lp.bn is not None:
            t = ops.batchnorm(t, lp.bn, training=False)
        if spec.act:
            t = ops.relu6(t)
        return t

    y = conv_bn_act(x, "contract_dw")
    body_in = y
    y = conv_bn_act(y, "expand_pw")
    y = conv_bn_act(y, "body_dw")
    y = conv_bn_act(y, "reduce_pw")
    if cfg.use_residual:
        y = ops.eltadd(y, ops.take_first_channels(body_in, cfg.main_width))
    for u in range(2, cfg.contraction_count + 1):
        y = conv_bn_act(y, f"casc{u}_dw")
        y = conv_bn_act(y, f"casc{u}_pw")
    factor = 2 ** cfg.contraction_count if cfg.stride == 1 \
        else 2 ** (cfg.contraction_count - 1)
    if factor > 1:
        y = ops.bilinear_upsample(y, factor)
    y = conv_bn_act(y, "smooth_dw")
    short = x if cfg.stride == 1 else ops.avgpool(x, 2, 2)
    short = ops.take_first_channels(short, cfg.shortcut_width)
    return ops.concat_channels(y, short)


class TestCompositionalOracle:
    @pytest.mark.parametrize("cin,cout,t,stride,k", [
        (4, 4, 2, 1, 1), (4, 6, 2, 2, 1), (6, 4, 3, 1, 1),
        (4, 4, 2, 1, 2), (4, 8, 2, 2, 2),
    ])
    def test_hbo_equals_primitive_chain(self, cin, cout, t, stride, k):
        cfg = BlockConfig(cin, cout, t, stride, HBO, contraction_count=k)
        rng = np.random.default_rng(cin * 100 + cout * 10 + stride + k)
        p = init_block_params(cfg, rng)
        x = Tensor(rng.normal(size=(2, cin, 8, 8)))
        got = harmonious_bottleneck_forward(x, cfg, p)
        want = compose_hbo_from_primitives(x, cfg, p)
        assert tensor_equal_within(got, want, 1e-12)

    def test_inverted_residual_equals_primitive_chain(self):
        cfg = BlockConfig(4, 4, 2, 1, INV)
        rng = np.random.default_rng(9)
        p = init_block_params(cfg, rng)
        x = Tensor(rng.normal(size=(2, 4, 6, 6)))
        got = inverted_residual_forward(x, cfg, p)
        y = x
        for name in ("expand_pw", "body_dw", "reduce_pw"):
            spec = {s.name: s for s in block_layer_table(cfg)}[name]
            lp = p.layers[name]
            if spec.kind == "depthwise":
                y = ops.depthwise_conv(y, lp.kernel, stride=spec.stride)
            else:
                y = ops.pointwise_conv(y, lp.kernel)
            y = ops.batchnorm(y, lp.bn, training=False)
            if spec.act:
                y = ops.relu6(y)
        want = ops.eltadd(y, x)
        assert tensor_equal_within(got, want, 1e-12)


class TestWidestIntermediate:
    def test_expanded_body_lives_at_half_resolution(self):
        """For a config whose widest tensor is the expanded body, the largest
        intermediate has t*c_in*(h/2)*(w/2) elements, 4x fewer than the
        inverted residual's widest tensor at equal t."""
        h = w = 8
        cfg = BlockConfig(4, 4, 6, 1, HBO)
        p = init_block_params(cfg, np.random.default_rng(0))
        tape = Tape()
        xn = tape.leaf(np.random.default_rng(1).normal(size=(1, 4, h, w)), "x")
        out = hbo_forward_node(xn, cfg, p, tape)
        intermediates = [n for n in tape.nodes
                         if n.parents and n is not out]
        biggest = max(n.value.size for n in intermediates)
        assert biggest == 6 * 4 * (h // 2) * (w // 2)

        inv_cfg = BlockConfig(4, 4, 6, 1, INV)
        inv_p = init_block_params(inv_cfg, np.random.default_rng(2))
        inv_tape = Tape()
        inv_x = inv_tape.leaf(np.random.default_rng(3).normal(size=(1, 4, h, w)))
        from hbonet.blocks import inverted_residual_forward_node
        inverted_residual_forward_node(inv_x, inv_cfg, inv_p, inv_tape)
        inv_biggest = max(n.value.size for n in inv_tape.nodes if n.parents)
        assert inv_biggest == 6 * 4 * h * w
        assert inv_biggest == 4 * biggest
