"""Tree-crop mapping toolkit: compositing, sampling, design-based assessment,
calibration, landscape analytics and a numpy transformer forward pass."""

from . import analytics, assess, calibrate, composite, model, raster, sampler
from .raster import Grid, GridTransform, RegionMask, read_grid, write_grid

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "GridTransform",
    "RegionMask",
    "analytics",
    "assess",
    "calibrate",
    "composite",
    "model",
    "raster",
    "read_grid",
    "sampler",
    "write_grid",
]
