"""
Entropy as uncertainty and calibration error
============================================

Confidence is one minus normalized entropy. A reliability table bins it and
compares each bin's mean confidence with its accuracy.
"""

# %%
import numpy as np

from treecrop import calibrate

p = np.zeros((8, 1, 3))
p[:, 0, 0] = 1 / 8
p[0, 0, 1] = 1.0
p[:2, 0, 2] = 0.5
print(calibrate.normalized_entropy(p)[0])

# %%
rng = np.random.default_rng(0)
conf = rng.uniform(0, 1, 20_000)
calibrated = rng.uniform(0, 1, conf.size) < conf
overconfident = rng.uniform(0, 1, conf.size) < conf**2
print(f"calibrated ECE:    {calibrate.ece(conf, calibrated).ece:.4f}")
print(f"overconfident ECE: {calibrate.ece(conf, overconfident).ece:.4f}")

# %%
print(calibrate.ece(conf, overconfident, bins=6).to_csv())
