"""
Design-based accuracy and area estimation
=========================================

A stratified error matrix turns into unbiased class areas once each stratum is
weighted by its mapped share of the study area. The bundled matrix has three
strata (tree crop, non-tree crop and a buffer ring around mapped tree crop)
scored against two reference classes.
"""

# %%
from importlib import resources

import numpy as np

from treecrop import assess

data = resources.files("treecrop") / "data"
m = assess.read_error_matrix(data / "reference_counts.csv", data / "reference_strata.csv")
print(m.strata, m.ref_classes)
print(m.counts)

# %%
# Stratum weights are area shares. The buffer is small on the map but carries
# most of the omitted tree crop.
print(np.round(assess.stratum_weights(m.stratum_areas), 4))

# %%
acc = assess.accuracies(m)
print(f"user's accuracy (tree crop): {acc.user['tree_crop']:.4f}")
print(f"producer's accuracy, area-weighted: {acc.producer['tree_crop']:.4f}")
print(f"producer's accuracy, sample counts only: {acc.producer_unweighted['tree_crop']:.4f}")
print(f"overall accuracy: {acc.overall:.4f}")

# %%
# Adjusted areas with standard errors and 95% intervals.
for est in assess.adjusted_area(m):
    print(f"{est.class_label:>14}: {est.adjusted_area_ha / 1e6:8.3f} Mha "
          f"+- {est.ci95_ha / 1e6:.3f} (SE {est.se_ha / 1e6:.3f})")

# %%
# Regions with too few tree-crop pixels for a direct estimate get the ratio of
# adjusted to mapped area observed where estimation was possible.
res = assess.scaling_adjustment(assess.read_region_areas(data / "regional_scaling.csv"))
print(f"factor {res.factor:.4f}, total {res.total_ha / 1e6:.2f} Mha")
