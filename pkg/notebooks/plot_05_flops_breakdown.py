"""
Where the FLOPs go
==================

Single-layer cost of a joint-attention block with 8192 image tokens (half of
them reference), cut to 6144 by pruning.
"""

import math

from topi import flops

for report in flops.heavy_load_table():
    print(report.format_table())
    print()

# attention is quadratic in sequence length, so it shrinks fastest
for n in (8192, 7168, 6144, 5120, 4096):
    rep = flops.layer_breakdown(flops.CostConfig(), n)
    print(f"N_img={n}: attention {float(rep.reduction('attn_core')):5.1f}%  total {float(rep.reduction()):5.1f}%")

###############################################################################
# Scoring and selection are cheap next to one layer, and amortize over the
# update interval
base = sum(flops.layer_flops("flux_double", 8192, 512, 4096).values())
for dt in (1, 5, 10, math.inf):
    ov = flops.overhead_flops(3, 4096, 4096, dt, heads=24)
    print(f"interval {dt}: {float(ov.amortized) / base * 100:.4f}% of one layer per step")
