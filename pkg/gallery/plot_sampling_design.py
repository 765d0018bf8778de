"""
Building a stratified sample
============================

Sample size from a target standard error, a buffer stratum around mapped tree
crop, seeded draws and a spatially blocked train/val/test split.
"""

# %%
import numpy as np
from scipy import ndimage

from treecrop import sampler
from treecrop.raster import GridTransform, RegionMask

t = GridTransform(0.0, 0.0, 30.0, "demo")
rng = np.random.default_rng(0)
field = ndimage.gaussian_filter(rng.normal(size=(200, 300)), 5)
tc = RegionMask.from_bool(field > 0.08, t, "tree_crop")
print(f"tree-crop share of the scene: {tc.inside.mean():.3f}")

# %%
# Expected standard deviations per stratum come from anticipated accuracies.
sd_tc, sd_rest = sampler.stratum_sd(0.8), sampler.stratum_sd(0.95)
w_tc = tc.inside.mean()
n = sampler.sample_size(0.01, [(w_tc, sd_tc), (1 - w_tc, sd_rest)])
print("samples for SE 0.01:", n)

# %%
buf = sampler.buffer_stratum(tc, 90.0)
rest = RegionMask.from_bool(~tc.inside & ~buf.inside, t, "rest")
alloc = sampler.allocate(n, sampler.EqualSplit())
alloc["buffer"] = 50
strata = (
    sampler.StratumSpec("tree_crop", tc, "tree_crop"),
    sampler.StratumSpec("non_tree_crop", rest, "non_tree_crop"),
    sampler.StratumSpec("buffer", buf, "non_tree_crop"),
)
points = sampler.stratified_sample(sampler.SampleDesign(strata, alloc, seed=7))
print({k: sum(p.stratum_id == k for p in points) for k in alloc})

# %%
# Cells of 1.5 km go wholesale to one split, so neighbouring points never leak
# across train and test.
split = sampler.geo_split(points, cell_km=1.5, ratios=(8, 1, 1), seed=7)
print({s: sum(p.split == s for p in split) for s in ("train", "val", "test")})

# %%
# CutMix swaps a random box of one sample (pixels and labels) into another.
xa, xb = np.zeros((4, 10, 64, 64)), np.ones((4, 10, 64, 64))
ya, yb = np.zeros((64, 64), int), np.ones((64, 64), int)
x, y = sampler.cutmix((xa, ya), (xb, yb), seed=3)
print(f"pasted fraction: {y.mean():.3f}")
