import numpy as np
import pytest

from treecrop.raster import GridTransform, RegionMask


@pytest.fixture
def transform():
    return GridTransform(1000.0, 5000.0, 10.0, "test-crs")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mask(rng, shape, density, transform, region_id=""):
    return RegionMask.from_bool(rng.random(shape) < density, transform, region_id)


def brute_force_distance(inside, pixel_size=1.0):
    """All-pairs minimum distance from every pixel to the set ``inside``."""
    rows, cols = np.indices(inside.shape)
    pts = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.int64)
    src = np.argwhere(inside).astype(np.int64)
    if len(src) == 0:
        return np.full(inside.shape, np.inf)
    best = np.full(len(pts), np.iinfo(np.int64).max)
    for chunk in np.array_split(src, max(1, len(src) // 256)):
        d2 = ((pts[:, None, :] - chunk[None, :, :]) ** 2).sum(-1)
        best = np.minimum(best, d2.min(axis=1))
    return np.sqrt(best.astype(np.float64)).reshape(inside.shape) * pixel_size
