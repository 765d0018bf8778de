"""
Forward pass of the fusion transformer
======================================

Optical and radar seasonal stacks are cut into 8x8 patches, encoded over
space and then over seasons, fused by a cross-attention decoder and decoded to
per-pixel class logits. Weights here are untrained.
"""

# %%
import numpy as np

from treecrop import calibrate, model

cfg = model.ModelConfig()
print(f"parameters: {model.param_count(cfg):,}")
print(f"one encoder layer: {model.layer_param_total(cfg, 'encoder'):,}")
print(f"one decoder layer: {model.layer_param_total(cfg, 'decoder'):,}")

# %%
# A smaller configuration keeps the demo quick.
small = model.ModelConfig(image_size=32, embed_dim=48, heads=4)
params = model.init_params(small, seed=0)
rng = np.random.default_rng(0)
s1 = rng.normal(size=(4, 64, 64, 5)).astype(np.float32)
s2 = rng.normal(size=(4, 64, 64, 10)).astype(np.float32)
logits = model.forward_tiled(s1, s2, params, small, threads=2)
print("logits:", logits.shape)

# %%
# Attention probabilities can be recorded for inspection.
rec = []
model.forward(s1[:, :32, :32], s2[:, :32, :32], params, small, record=rec)
print([p.shape for p in rec])

# %%
# An ensemble of differently seeded members is fused in logit space.
members = [model.forward_tiled(s1, s2, model.init_params(small, k), small).transpose(2, 0, 1) for k in range(3)]
fused = calibrate.ensemble_fuse(members)
print("mean normalized entropy:", float(calibrate.normalized_entropy(fused.probs).mean()))
