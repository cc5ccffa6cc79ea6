#!/usr/bin/env python3
"""Reproduce the published Multiply-Adds figures from the analytic ledger:
the width spectrum, the resolution spectrum, and the cascade variants."""
from hbonet.complexity import ledger
from hbonet.network import build_network, hbonet_spec, mobilenetv2_spec


def mflops(spec):
    return ledger(build_network(spec, init_weights=False)).total_macs / 1e6


print("width spectrum @224 (reference MFLOPs in parentheses)")
print(f"{'width':>8} {'hbonet':>16} {'mobilenetv2':>18}")
HB = {1.0: 305, 0.8: 205, 0.5: 96, 0.35: 61, 0.25: 37, 0.1: 14}
MB = {1.0: 300, 0.75: 209, 0.5: 97, 0.35: 59, 0.25: 37, 0.1: 13}
for w in (1.0, 0.8, 0.75, 0.5, 0.35, 0.25, 0.1):
    hb = f"{mflops(hbonet_spec(width=w)):7.1f} ({HB[w]:3d})" if w in HB else ""
    mb = f"{mflops(mobilenetv2_spec(width=w)):7.1f} ({MB[w]:3d})" if w in MB else ""
    print(f"{w:>8} {hb:>16} {mb:>18}")

print("\nresolution spectrum (hbonet)")
print(f"{'res':>6} {'width 0.8':>16} {'width 0.35':>16}")
R8 = {224: 205, 192: 150, 160: 105, 128: 68, 96: 39}
R35 = {224: 61, 192: 45, 160: 31, 128: 21, 96: 12}
for r in (224, 192, 160, 128, 96):
    a = mflops(hbonet_spec(width=0.8, resolution=r))
    b = mflops(hbonet_spec(width=0.35, resolution=r))
    print(f"{r:>6} {a:8.1f} ({R8[r]:3d})  {b:8.1f} ({R35[r]:3d})")

print("\ncascade contraction variants (width 0.25, divisor 8)")
for k, ref in [(1, 44), (2, 45), (3, 45)]:
    got = mflops(hbonet_spec(width=0.25, divisor=8, variant=k))
    print(f"  2^{k}x contraction: {got:6.2f} MFLOPs  (reference {ref})")

print("\nper-layer ledger for the smallest network (width 0.1 @224):")
led = ledger(build_network(hbonet_spec(width=0.1), init_weights=False))
print(led.pretty())
