"""The two building blocks: MobileNetV2-style inverted residual and the
harmonious bottleneck (spatial contraction-expansion around a channel
expansion-contraction body, with half the output channels copied from the
input).

Block structure is expressed once as a layer table; parameter construction,
forward wiring, and the complexity ledger all consume that table, and the
test suite pins the forward against a straight-line composition of the
primitive ops.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

from .autodiff import Node, Tape
from .ops import BatchNormParams
from .tensor import ConvKernel, DimensionError, Tensor

__all__ = [
    "ConfigError",
    "BlockKind",
    "BlockConfig",
    "ConvLayerSpec",
    "LayerParams",
    "BlockParams",
    "make_divisible",
    "block_layer_table",
    "init_block_params",
    "inverted_residual_forward",
    "harmonious_bottleneck_forward",
    "hbo_forward_node",
    "inverted_residual_forward_node",
]


class ConfigError(ValueError):
    """Invalid block or network configuration."""


class BlockKind(Enum):
    INVERTED_RESIDUAL = "inverted_residual"
    HARMONIOUS_BOTTLENECK = "harmonious_bottleneck"


def make_divisible(c: float, divisor: int) -> int:
    """Round a scaled channel count down to a multiple of ``divisor``.

    Never returns less than ``divisor``; if rounding down would fall below
    90% of ``c`` the result is bumped up by one divisor step instead.
    """
    if c <= 0:
        raise ValueError(f"channel count must be positive, got {c}")
    if divisor not in (2, 4, 8):
        raise ValueError(f"divisor must be one of 2/4/8, got {divisor}")
    n = max(divisor, int(c) // divisor * divisor)
    if n < 0.9 * c:
        n += divisor
    return n


@dataclass(frozen=True)
class BlockConfig:
    """Shape-level description of one block; kernel shapes follow from it."""

    c_in: int
    c_out: int
    t: int
    stride: int
    kind: BlockKind
    contraction_count: int = 1
    # EltAdd endpoints inside the bottleneck are under-determined by the
    # source material; None enables the residual whenever channels permit.
    residual: bool | None = None

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.t < 1:
            raise ConfigError(f"expansion factor must be >= 1, got {self.t}")
        if self.kind is BlockKind.HARMONIOUS_BOTTLENECK:
            if self.c_out % 2 != 0:
                raise ConfigError(f"HBO needs even c_out, got {self.c_out}")
            if self.contraction_count < 1:
                raise ConfigError("contraction_count must be >= 1")
        else:
            if self.contraction_count != 1:
                raise ConfigError("contraction_count only applies to HBO blocks")

    @property
    def hidden(self) -> int:
        return self.t * self.c_in

    @property
    def half(self) -> int:
        return self.c_out // 2

    @property
    def shortcut_width(self) -> int:
        """Channels copied from the (possibly pooled) input: half the output,
        clipped when channel rounding leaves the input narrower than that."""
        return min(self.half, self.c_in)

    @property
    def main_width(self) -> int:
        return self.c_out - self.shortcut_width

    @property
    def use_residual(self) -> bool:
        if self.kind is BlockKind.INVERTED_RESIDUAL:
            return self.stride == 1 and self.c_in == self.c_out
        if self.residual is not None:
            return self.residual
        return self.c_in >= self.main_width


@dataclass(frozen=True)
class ConvLayerSpec:
    """One convolution row of a block's layer table."""

    name: str
    kind: str           # 'dense' | 'depthwise' | 'pointwise'
    c_in: int
    c_out: int
    kernel: int
    stride: int
    bn: bool
    act: bool

    @property
    def groups(self) -> int:
        return self.c_in if self.kind == "depthwise" else 1

    @property
    def pad(self) -> int:
        return (self.kernel - 1) // 2

    def weight_shape(self) -> tuple[int, int, int, int]:
        cpg = 1 if self.kind == "depthwise" else self.c_in
        return (self.c_out, cpg, self.kernel, self.kernel)

    def param_count(self) -> int:
        n = int(np.prod(self.weight_shape()))
        if self.bn:
            n += 2 * self.c_out
        return n

    def macs(self, h_in: int, w_in: int) -> int:
        h_out = (h_in + 2 * self.pad - self.kernel) // self.stride + 1
        w_out = (w_in + 2 * self.pad - self.kernel) // self.stride + 1
        cpg = 1 if self.kind == "depthwise" else self.c_in
        return h_out * w_out * self.c_out * cpg * self.kernel * self.kernel

    def out_hw(self, h_in: int, w_in: int) -> tuple[int, int]:
        return (
            (h_in + 2 * self.pad - self.kernel) // self.stride + 1,
            (w_in + 2 * self.pad - self.kernel) // self.stride + 1,
        )


@dataclass
class LayerParams:
    kernel: ConvKernel
    bn: BatchNormParams | None


@dataclass
class BlockParams:
    """Learnable weights for one block, keyed by layer-table names."""

    layers: dict[str, LayerParams] = field(default_factory=dict)

    def __iter__(self) -> Iterator[tuple[str, LayerParams]]:
        return iter(self.layers.items())


def block_layer_table(cfg: BlockConfig) -> tuple[ConvLayerSpec, ...]:
    """The block's convolution sequence; shapes fully determined by cfg.

    Harmonious bottleneck main branch:
      contract_dw   5x5 depthwise, stride 2 (spatial contraction)
      expand_pw     1x1 to t*c_in (kept even at t == 1)
      body_dw       3x3 depthwise
      reduce_pw     1x1 linear down to c_out/2
      casc{u}_dw/pw extra contraction units (cascade variants), linear
      smooth_dw     depthwise after bilinear expansion: 5x5 for stride-1
                    blocks (true 2^k upsample), 3x3 for stride-2 blocks
    The shortcut half is a copy and holds no parameters.
    """
    if cfg.kind is BlockKind.INVERTED_RESIDUAL:
        rows = []
        if cfg.t != 1:
            rows.append(ConvLayerSpec("expand_pw", "pointwise", cfg.c_in,
                                      cfg.hidden, 1, 1, True, True))
        rows.append(ConvLayerSpec("body_dw", "depthwise", cfg.hidden,
                                  cfg.hidden, 3, cfg.stride, True, True))
        rows.append(ConvLayerSpec("reduce_pw", "pointwise", cfg.hidden,
                                  cfg.c_out, 1, 1, True, False))
        return tuple(rows)

    main = cfg.main_width
    rows = [
        ConvLayerSpec("contract_dw", "depthwise", cfg.c_in, cfg.c_in,
                      5, 2, True, True),
        ConvLayerSpec("expand_pw", "pointwise", cfg.c_in, cfg.hidden,
                      1, 1, True, True),
        ConvLayerSpec("body_dw", "depthwise", cfg.hidden, cfg.hidden,
                      3, 1, True, True),
        ConvLayerSpec("reduce_pw", "pointwise", cfg.hidden, main,
                      1, 1, True, False),
    ]
    for u in range(2, cfg.contraction_count + 1):
        rows.append(ConvLayerSpec(f"casc{u}_dw", "depthwise", main, main,
                                  3, 2, True, False))
        rows.append(ConvLayerSpec(f"casc{u}_pw", "pointwise", main, main,
                                  1, 1, True, False))
    smooth_k = 5 if cfg.stride == 1 else 3
    rows.append(ConvLayerSpec("smooth_dw", "depthwise", main, main,
                              smooth_k, 1, True, True))
    return tuple(rows)


def init_block_params(cfg: BlockConfig, rng: np.random.Generator | None = None,
                      zero: bool = False) -> BlockParams:
    """Kaiming-style init: conv weights ~ N(0, 2/fan_out), BN gamma 1 beta 0."""
    if rng is None:
        rng = np.random.default_rng(0)
    params = BlockParams()
    for spec in block_layer_table(cfg):
        shape = spec.weight_shape()
        if zero:
            w = np.zeros(shape)
        else:
            fan_out = spec.kernel * spec.kernel * spec.c_out // spec.groups
            w = rng.normal(0.0, np.sqrt(2.0 / fan_out), size=shape)
        kern = ConvKernel(w, groups=spec.groups)
        bn = BatchNormParams.identity(spec.c_out) if spec.bn else None
        params.layers[spec.name] = LayerParams(kern, bn)
    return params


# ---------------------------------------------------------------------------
# forward wiring (single implementation via the tape)
# ---------------------------------------------------------------------------

def _apply_layer(tape: Tape, x: Node, spec: ConvLayerSpec, lp: LayerParams,
                 training: bool, prefix: str = "") -> Node:
    w = lp.kernel.data
    base = f"{prefix}{spec.name}"
    if spec.kind == "depthwise":
        y = tape.depthwise_conv(x, tape.leaf(w[:, 0], f"{base}.weight"),
                                stride=spec.stride)
    elif spec.kind == "pointwise":
        y = tape.pointwise_conv(x, tape.leaf(w[:, :, 0, 0], f"{base}.weight"))
    else:
        y = tape.conv2d(x, tape.leaf(w, f"{base}.weight"),
                        stride=spec.stride, pad=spec.pad)
    if lp.bn is not None:
        y = tape.batchnorm(y, tape.leaf(lp.bn.gamma, f"{base}.gamma"),
                           tape.leaf(lp.bn.beta, f"{base}.beta"),
                           lp.bn, training)
    if spec.act:
        y = tape.relu6(y)
    return y


def _layer_map(cfg: BlockConfig) -> dict[str, ConvLayerSpec]:
    return {s.name: s for s in block_layer_table(cfg)}


def inverted_residual_forward_node(x: Node, cfg: BlockConfig, p: BlockParams,
                                   tape: Tape, training: bool = False,
                                   prefix: str = "") -> Node:
    table = _layer_map(cfg)
    y = x
    for name in ("expand_pw", "body_dw", "reduce_pw"):
        if name not in table:
            continue
        y = _apply_layer(tape, y, table[name], p.layers[name], training, prefix)
    if cfg.use_residual:
        y = tape.eltadd(y, x)
    return y


def hbo_forward_node(x: Node, cfg: BlockConfig, p: BlockParams,
                     tape: Tape, training: bool = False,
                     prefix: str = "") -> Node:
    n, c, h, w = x.value.shape
    k = cfg.contraction_count
    if h % (2 ** k) or w % (2 ** k):
        raise ConfigError(
            f"input {h}x{w} not divisible by 2^{k} contraction"
        )
    table = _layer_map(cfg)

    y = _apply_layer(tape, x, table["contract_dw"], p.layers["contract_dw"],
                     training, prefix)
    body_in = y
    for name in ("expand_pw", "body_dw", "reduce_pw"):
        y = _apply_layer(tape, y, table[name], p.layers[name], training, prefix)
    if cfg.use_residual:
        y = tape.eltadd(y, tape.take_first_channels(body_in, cfg.main_width))
    for u in range(2, k + 1):
        y = _apply_layer(tape, y, table[f"casc{u}_dw"],
                         p.layers[f"casc{u}_dw"], training, prefix)
        y = _apply_layer(tape, y, table[f"casc{u}_pw"],
                         p.layers[f"casc{u}_pw"], training, prefix)
    factor = 2 ** k if cfg.stride == 1 else 2 ** (k - 1)
    if factor > 1:
        y = tape.bilinear_upsample(y, factor)
    y = _apply_layer(tape, y, table["smooth_dw"], p.layers["smooth_dw"],
                     training, prefix)

    short = x if cfg.stride == 1 else tape.avgpool(x, 2, 2)
    short = tape.take_first_channels(short, cfg.shortcut_width)
    return tape.concat_channels(y, short)


def _eager(block_fn, x: Tensor, cfg: BlockConfig, p: BlockParams) -> Tensor:
    if x.c != cfg.c_in:
        raise DimensionError(f"block expects {cfg.c_in} channels, got {x.c}")
    tape = Tape(grad_enabled=False)
    out = block_fn(tape.leaf(x.data, "x"), cfg, p, tape, training=False)
    return Tensor._wrap(out.value)


def inverted_residual_forward(x: Tensor, cfg: BlockConfig,
                              p: BlockParams) -> Tensor:
    """Expand, depthwise-filter, linearly contract; skip when shape-preserving."""
    return _eager(inverted_residual_forward_node, x, cfg, p)


def harmonious_bottleneck_forward(x: Tensor, cfg: BlockConfig,
                                  p: BlockParams) -> Tensor:
    """Spatially contracted bottleneck body plus a copied shortcut half.

    Output is concat(main, shortcut): the first c_out/2 channels are
    computed, the last c_out/2 are the input's leading channels (stride 1)
    or their 2x2-average-pooled version (stride 2).
    """
    return _eager(hbo_forward_node, x, cfg, p)
