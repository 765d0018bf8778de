"""
Landscape analytics on a binary tree-crop map
=============================================

Overlap with forest-loss years, density bands around a protected area,
hexagon densities and agreement with a second map.
"""

# %%
import numpy as np
from scipy import ndimage

from treecrop import analytics
from treecrop.raster import Grid, GridTransform, RegionMask

t = GridTransform(0.0, 0.0, 30.0, "demo")
rng = np.random.default_rng(2)
shape = (240, 320)
tc = RegionMask.from_bool(ndimage.gaussian_filter(rng.normal(size=shape), 4) > 0.1, t)
loss = Grid(np.where(rng.random(shape) < 0.2, rng.integers(1, 21, shape), 0).astype(np.uint8), t)

# %%
lo = analytics.loss_overlap(tc, loss, threads=2)
print(f"tree crop on loss pixels: {lo.fraction_of_tc:.3f} of {lo.total_tc_ha:.0f} ha")
print({y: round(a, 1) for y, a in list(lo.per_year_ha.items())[:5]})

# %%
pa = np.zeros(shape, bool)
pa[80:160, 100:220] = True
prof = analytics.pa_buffer_profile(tc, RegionMask.from_bool(pa, t), 300.0, 1500.0)
for b in prof.bands:
    print(f"{b.lo_m:7.0f} .. {b.hi_m:6.0f} m  density {b.density:.3f}  cumulative {b.cumulative_density:.3f}")

# %%
cells = analytics.hex_aggregate(tc, 900.0)
print(f"{len(cells)} hexagons, densest {max(c.density for c in cells):.2f}")

# %%
other = RegionMask.from_bool(tc.inside ^ (rng.random(shape) < 0.05), t)
ag = analytics.map_agreement(tc, other)
print(ag.pixels)
