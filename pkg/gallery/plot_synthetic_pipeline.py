"""
End-to-end synthetic run
========================

Every stage on a seeded synthetic scene, from composites to analytics. The
artifacts depend only on the seed, whatever the thread count. Model weights
are freshly initialized, so the map itself has no skill.
"""

# %%
import json

from treecrop.pipeline import synthetic_pipeline

artifacts = synthetic_pipeline(seed=0, threads=2)
for name, blob in sorted(artifacts.items()):
    print(f"{name:24s} {len(blob):8d} bytes")

# %%
report = json.loads(artifacts["assessment.json"])
print(json.dumps({k: report[k] for k in ("overall_accuracy", "user_accuracy")}, indent=1))

# %%
print(artifacts["reliability.csv"].decode())
