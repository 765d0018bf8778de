"""
Seasonal composites and robust normalization
============================================

Cloudy acquisitions are dropped, the rest reduced per calendar quarter, and
each channel centred and scaled by its median and MAD.
"""

# %%
import datetime as dt

import numpy as np

from treecrop import composite
from treecrop.raster import Grid, GridTransform

t = GridTransform(0.0, 0.0, 10.0, "demo")
rng = np.random.default_rng(1)
obs = []
for month in range(1, 13):
    bands = tuple(Grid(rng.normal(1000 + 50 * month, 80, (32, 32)).astype(np.float32), t) for _ in range(3))
    clouds = rng.random((32, 32)) < rng.uniform(0, 0.6)
    obs.append(composite.Observation(dt.date(2020, month, 10), bands, clouds))
stack = composite.ObservationStack(tuple(obs), "optical", ("red", "nir", "swir"))

# %%
kept = composite.cloud_filter(stack, 0.40)
print(f"kept {len(kept)} of {len(stack)} acquisitions")

# %%
comp = composite.seasonal_composite(kept, "median")
print("composite shape (season, band, row, col):", comp.data.shape)
print("fill pixels per season:", [int(f.sum()) for f in comp.fill])

# %%
stats = composite.robust_stats([comp])
norm = composite.normalize(comp, stats)
print("channel medians:", np.round(stats.median, 1))
# Filled pixels are set to zero after normalization; valid ones centre near zero.
valid = ~norm.fill
print("normalized medians:", [round(float(np.median(norm.data[:, b][valid])), 3) for b in range(3)])
