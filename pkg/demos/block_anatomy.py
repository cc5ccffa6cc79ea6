#!/usr/bin/env python3
"""Walk through the harmonious bottleneck block: its layer table, the
contraction-expansion geometry, and the copied-channel law."""
import numpy as np

from hbonet import (
    BlockConfig,
    BlockKind,
    Tensor,
    block_layer_table,
    harmonious_bottleneck_forward,
    init_block_params,
)

# A stride-1 block from the full-width network: 20 channels in, 36 out,
# expansion factor 2, one spatial contraction unit.
cfg = BlockConfig(20, 36, t=2, stride=1, kind=BlockKind.HARMONIOUS_BOTTLENECK)

print("layer table (name, kind, c_in -> c_out, kxk, stride):")
for spec in block_layer_table(cfg):
    act = "relu6" if spec.act else "linear"
    print(f"  {spec.name:<12} {spec.kind:<10} {spec.c_in:>3} -> {spec.c_out:<3}"
          f"  {spec.kernel}x{spec.kernel} s{spec.stride}  bn={spec.bn} {act}")

# Forward pass: input 112x112, output keeps the resolution, channels 20 -> 36.
rng = np.random.default_rng(0)
params = init_block_params(cfg, rng)
x = Tensor(rng.normal(size=(1, 20, 112, 112)))
y = harmonious_bottleneck_forward(x, cfg, params)
print(f"\nforward: {x.shape} -> {y.shape}")

# The channel law: only c_out/2 = 18 channels are computed. Zero out every
# weight and the main half vanishes while the shortcut half is a verbatim
# copy of the input's first 18 channels.
zero_params = init_block_params(cfg, zero=True)
y0 = harmonious_bottleneck_forward(x, cfg, zero_params)
print("\nwith all-zero weights:")
print("  main half max |value|   :", np.abs(y0.data[:, :18]).max())
print("  shortcut half == input? :",
      np.array_equal(y0.data[:, 18:], x.data[:, :18]))

# The widest tensor (t * c_in = 40 channels) lives at half resolution:
# 40 x 56 x 56 elements instead of the 40 x 112 x 112 an inverted residual
# with the same expansion factor would allocate. That 4x saving is the point
# of wrapping the channel body in the spatial contraction-expansion pair.
widest_hbo = cfg.hidden * (112 // 2) ** 2
widest_inv = cfg.hidden * 112 ** 2
print(f"\nwidest intermediate: {widest_hbo:,} elements "
      f"(inverted residual: {widest_inv:,}, ratio "
      f"{widest_inv / widest_hbo:.0f}x)")

# Stride-2 variant: the shortcut half is the 2x2-average-pooled input and
# there is no upsampling (the contraction itself provides the block stride).
cfg2 = BlockConfig(36, 72, t=2, stride=2, kind=BlockKind.HARMONIOUS_BOTTLENECK)
params2 = init_block_params(cfg2, rng)
x2 = Tensor(rng.normal(size=(1, 36, 112, 112)))
y2 = harmonious_bottleneck_forward(x2, cfg2, params2)
print(f"\nstride-2 block: {x2.shape} -> {y2.shape}")

# Cascade variant: two contraction units dive to quarter resolution before
# a 4x bilinear expansion restores the block output size.
cfg4 = BlockConfig(20, 36, t=2, stride=1, kind=BlockKind.HARMONIOUS_BOTTLENECK,
                   contraction_count=2)
print("\ncascade (2 units) adds linear layers:",
      [s.name for s in block_layer_table(cfg4) if s.name.startswith("casc")])
params4 = init_block_params(cfg4, rng)
y4 = harmonious_bottleneck_forward(x, cfg4, params4)
print(f"cascade forward: {x.shape} -> {y4.shape}")
