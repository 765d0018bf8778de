"""Probability sampling designs for training and accuracy assessment.

Covers buffer strata around mapped tree crops, stratified sample-size
targeting, allocation, seeded stratified draws, geographic cell splits and
CutMix augmentation. All randomness goes through Philox (a counter-based
generator) keyed from ``numpy.random.SeedSequence`` so draws do not depend on
platform or call order across strata.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .analytics import squared_distance_px
from .raster import RegionMask, atomic_write_bytes, check_aligned

TREE_CROP = "tree_crop"
NON_TREE_CROP = "non_tree_crop"
BUFFER = "buffer"
UNKNOWN = "unknown"
LABELS = (TREE_CROP, NON_TREE_CROP, UNKNOWN)
SPLITS = ("train", "val", "test", "none")

# per-country buffer radii (m) used for the assessment's buffer stratum
BUFFER_RADIUS_M = {
    "BR": 300.0,
    "CO": 500.0,
    "EC": 1000.0,
    "CL": 1000.0,
}
DEFAULT_BUFFER_RADIUS_M = 2000.0

CSV_FIELDS = ("id", "x", "y", "stratum_id", "map_class", "ref_class", "split")


class SamplingError(Exception):
    pass


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for ``(seed, *key)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in key]])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class StratumSpec:
    stratum_id: str
    mask: RegionMask
    map_class: str
    area_ha: float = 0.0
    weight: float = 0.0


@dataclass(frozen=True)
class SampleDesign:
    strata: tuple[StratumSpec, ...]
    allocation: Mapping[str, int]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strata", tuple(self.strata))
        if any(int(v) < 0 for v in self.allocation.values()):
            raise ValueError("allocation counts must be >= 0")
        if self.strata:
            check_aligned(*[s.mask for s in self.strata])
            seen = np.zeros(self.strata[0].mask.shape, dtype=np.int32)
            for s in self.strata:
                seen += s.mask.inside
            if (seen > 1).any():
                raise ValueError("stratum masks overlap")

    @property
    def total(self) -> int:
        return int(sum(self.allocation.values()))


@dataclass(frozen=True)
class SamplePoint:
    id: int
    x: float
    y: float
    stratum_id: str
    map_class: str
    ref_class: str = UNKNOWN
    split: str = "none"


def buffer_radius(country: str) -> float:
    return BUFFER_RADIUS_M.get(country, DEFAULT_BUFFER_RADIUS_M)


def buffer_stratum(tc_mask: RegionMask, radius_m: float) -> RegionMask:
    """Pixels within ``radius_m`` of a tree-crop pixel, tree crops excluded."""
    if radius_m < 0:
        raise ValueError("radius_m must be >= 0")
    inside = tc_mask.inside
    ps = tc_mask.transform.pixel_size
    d2 = squared_distance_px(inside)
    r_px = radius_m / ps
    # integer squared distances compared against r^2 with a tiny slack for r_px rounding
    near = (d2 >= 0) & (d2 <= r_px * r_px * (1 + 1e-12))
    ring = near & ~inside & tc_mask.valid
    return RegionMask.from_bool(ring, tc_mask.transform, f"{tc_mask.region_id}:buffer", tc_mask.valid)


def sample_size(target_se: float, strata: Sequence[tuple[float, float]]) -> int:
    """Total n for a target standard error of an overall proportion.

    ``n = (sum_h W_h * S_h / SE)^2`` rounded up, with ``strata`` a list of
    ``(W_h, S_h)`` pairs.
    """
    if target_se <= 0:
        raise ValueError("target_se must be positive")
    ws = sum(w * s for w, s in strata)
    if any(s < 0 for _, s in strata):
        raise ValueError("S_h must be >= 0")
    if ws <= 0:
        raise ValueError("all stratum standard deviations are zero")
    n = (ws / target_se) ** 2
    return int(math.ceil(n - 1e-9 * n))


def stratum_sd(users_accuracy: float) -> float:
    """Bernoulli standard deviation for an anticipated user's accuracy."""
    return math.sqrt(users_accuracy * (1.0 - users_accuracy))


def largest_remainder(n: int, weights: Sequence[float]) -> list[int]:
    """Integer apportionment of ``n``; ties go to the earlier entry."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0 or w.sum() <= 0:
        raise SamplingError("cannot allocate over empty or zero-weight strata")
    quotas = n * w / w.sum()
    base = np.floor(quotas).astype(np.int64)
    left = n - int(base.sum())
    rem = quotas - base
    order = sorted(range(len(w)), key=lambda i: (-rem[i], i))
    for i in order[:left]:
        base[i] += 1
    return [int(b) for b in base]


@dataclass(frozen=True)
class EqualSplit:
    tc: str = TREE_CROP
    non_tc: str = NON_TREE_CROP


@dataclass(frozen=True)
class Proportional:
    areas: Mapping[str, float]


def allocate(
    n: int,
    scheme: EqualSplit | Proportional,
    buffer_per_region: int = 0,
    regions: Iterable[str] = (),
) -> dict[str, int]:
    """Deterministic allocation of ``n`` samples plus per-region buffer samples.

    Buffer strata are keyed ``"buffer/<region>"``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if isinstance(scheme, EqualSplit):
        a, b = largest_remainder(n, [1.0, 1.0])
        out = {scheme.tc: a, scheme.non_tc: b}
    elif isinstance(scheme, Proportional):
        keys = list(scheme.areas)
        counts = largest_remainder(n, [scheme.areas[k] for k in keys])
        out = dict(zip(keys, counts))
    else:
        raise TypeError(f"unknown allocation scheme {scheme!r}")
    for region in regions:
        out[f"{BUFFER}/{region}"] = int(buffer_per_region)
    return out


def stratified_sample(design: SampleDesign) -> list[SamplePoint]:
    """Uniform draws of pixel centres without replacement within each stratum."""
    points: list[SamplePoint] = []
    for h, stratum in enumerate(design.strata):
        k = int(design.allocation.get(stratum.stratum_id, 0))
        if k == 0:
            continue
        flat = np.flatnonzero(stratum.mask.inside.ravel())
        if k > flat.size:
            raise SamplingError(
                f"stratum {stratum.stratum_id!r} has {flat.size} pixels, {k} requested"
            )
        rng = make_rng(design.seed, h)
        chosen = flat[rng.choice(flat.size, size=k, replace=False)]
        rows, cols = np.divmod(chosen, stratum.mask.shape[1])
        xs, ys = stratum.mask.transform.pixel_to_world(rows, cols)
        for x, y in zip(xs, ys):
            points.append(
                SamplePoint(len(points), float(x), float(y), stratum.stratum_id, stratum.map_class)
            )
    unknown = set(design.allocation) - {s.stratum_id for s in design.strata}
    if any(design.allocation[u] for u in unknown):
        raise SamplingError(f"allocation names unknown strata: {sorted(unknown)}")
    return points


def cell_of(x: float, y: float, cell_m: float) -> tuple[int, int]:
    return int(math.floor(x / cell_m)), int(math.floor(y / cell_m))


def geo_split(
    points: Sequence[SamplePoint],
    cell_km: float = 100.0,
    ratios: tuple[float, float, float] = (8, 1, 1),
    seed: int = 0,
) -> list[SamplePoint]:
    """Assign whole grid cells to train/val/test.

    Distinct cells are sorted, shuffled with the seed and cut by
    largest-remainder counts, so the assignment does not depend on point order.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    cell_m = cell_km * 1000.0
    cells = sorted({cell_of(p.x, p.y, cell_m) for p in points})
    assignment = split_cells(cells, ratios, seed)
    return [replace(p, split=assignment[cell_of(p.x, p.y, cell_m)]) for p in points]


def split_cells(cells: Sequence[tuple[int, int]], ratios, seed: int) -> dict[tuple[int, int], str]:
    cells = sorted(cells)
    if not cells:
        return {}
    counts = largest_remainder(len(cells), ratios)
    order = make_rng(seed, 0x5B17).permutation(len(cells))
    names = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
    return {cells[i]: names[j] for j, i in enumerate(order)}


# --------------------------------------------------------------------------
# CutMix


@dataclass(frozen=True)
class Box:
    row: int
    col: int
    height: int
    width: int

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        m[self.row : self.row + self.height, self.col : self.col + self.width] = True
        return m


def cutmix_box(shape: tuple[int, int], rng: np.random.Generator, area_range=(0.1, 0.5)) -> Box:
    """Rectangle with area fraction ~ U(area_range) and the image's aspect ratio."""
    H, W = shape
    lo, hi = area_range
    frac = rng.uniform(lo, hi) if hi > lo else lo
    h = min(H, max(0, int(round(H * math.sqrt(frac)))))
    w = min(W, max(0, int(round(W * math.sqrt(frac)))))
    r = int(rng.integers(0, H - h + 1))
    c = int(rng.integers(0, W - w + 1))
    return Box(r, c, h, w)


def apply_cutmix(a, b, box: Box):
    """Paste ``box`` of ``b`` into ``a``. Inputs are ``(..., H, W)`` arrays."""
    (xa, ya), (xb, yb) = a, b
    xa, ya, xb, yb = map(np.asarray, (xa, ya, xb, yb))
    if xa.shape != xb.shape or ya.shape != yb.shape:
        raise ValueError("cutmix operands differ in shape")
    if xa.shape[-2:] != ya.shape[-2:]:
        raise ValueError("inputs and labels differ in spatial shape")
    sl = (Ellipsis, slice(box.row, box.row + box.height), slice(box.col, box.col + box.width))
    x = xa.copy()
    y = ya.copy()
    x[sl] = xb[sl]
    y[sl] = yb[sl]
    return x, y


def cutmix(a, b, seed: int, area_range=(0.1, 0.5)):
    """CutMix two ``(inputs, labels)`` samples sharing one rectangle.

    ``inputs`` may carry any leading axes (seasons, bands); the last two axes
    are spatial and must match ``labels``.
    """
    shape = np.shape(a[1])[-2:]
    box = cutmix_box(shape, make_rng(seed, 0xC07), area_range)
    return apply_cutmix(a, b, box)


# --------------------------------------------------------------------------
# CSV


def format_points(points: Iterable[SamplePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for p in points:
        w.writerow([p.id, repr(float(p.x)), repr(float(p.y)), p.stratum_id, p.map_class, p.ref_class, p.split])
    return buf.getvalue()


def write_points(points: Iterable[SamplePoint], path) -> None:
    atomic_write_bytes(path, format_points(points).encode("utf-8"))


def read_points(path) -> list[SamplePoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"sample CSV header must be {','.join(CSV_FIELDS)}")
        out = []
        for row in reader:
            if row["split"] not in SPLITS:
                raise ValueError(f"unknown split {row['split']!r}")
            out.append(
                SamplePoint(
                    int(row["id"]), float(row["x"]), float(row["y"]), row["stratum_id"],
                    row["map_class"], row["ref_class"] or UNKNOWN, row["split"],
                )
            )
        return out
