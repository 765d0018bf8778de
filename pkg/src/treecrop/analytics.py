"""Landscape analytics on binary map rasters.

Forest-loss overlap by year, signed-distance profiles around protected areas,
hexagon density aggregation and two-map agreement tables. Areas are reported
in hectares from pixel counts, assuming an equal-area projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import Grid, RegionMask, check_aligned, map_tiles

M2_PER_HA = 10_000.0
LOSS_YEARS = tuple(range(2001, 2021))


def pixel_area_ha(transform) -> float:
    return transform.pixel_area / M2_PER_HA


def squared_distance_px(inside: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance, in pixel units, to the nearest ``True``.

    Returns int64. Pixels are at infinite distance when nothing is inside, which
    is signalled by ``-1``.
    """
    inside = np.asarray(inside, dtype=bool)
    if not inside.any():
        return np.full(inside.shape, -1, dtype=np.int64)
    _, idx = ndimage.distance_transform_edt(~inside, return_indices=True)
    rows, cols = np.indices(inside.shape)
    dr = (rows - idx[0]).astype(np.int64)
    dc = (cols - idx[1]).astype(np.int64)
    return dr * dr + dc * dc


def distance_field(inside: np.ndarray, pixel_size: float = 1.0) -> np.ndarray:
    """Float64 distance in map units to the nearest ``True`` pixel (inf if none)."""
    d2 = squared_distance_px(inside)
    if d2.size and d2.flat[0] < 0:
        return np.full(d2.shape, np.inf)
    return np.sqrt(d2.astype(np.float64)) * pixel_size


def distance_transform(mask: RegionMask) -> Grid:
    """Distance in metres from each pixel centre to the nearest mask pixel centre.

    An empty mask yields +inf everywhere with every pixel flagged invalid.
    """
    inside = mask.inside
    dist = distance_field(inside, mask.transform.pixel_size)
    valid = np.isfinite(dist)
    return Grid(dist.astype(np.float32), mask.transform, valid, has_mask=True)


def signed_distance(pa: RegionMask) -> np.ndarray:
    """Distance to the PA boundary, negative inside, positive outside (metres)."""
    inside = pa.inside
    if not inside.any():
        raise ValueError("protected-area mask is empty")
    ps = pa.transform.pixel_size
    out_dist = distance_field(inside, ps)
    in_dist = distance_field(~inside, ps)
    return np.where(inside, -in_dist, out_dist)


# --------------------------------------------------------------------------
# forest cover loss


@dataclass(frozen=True)
class LossOverlap:
    per_year_ha: dict[int, float]
    per_year_pixels: dict[int, int]
    total_overlap_ha: float
    total_tc_ha: float
    fraction_of_tc: float


def loss_overlap(tc: RegionMask, loss: Grid, region: RegionMask | None = None, threads: int = 1) -> LossOverlap:
    """Tree-crop area on land with detected loss, broken down by loss year.

    ``loss`` holds 0 for no loss and ``v`` in 1..20 for loss in year 2000+v.
    """
    items = [tc, loss] + ([region] if region is not None else [])
    transform = check_aligned(*items)
    lv = loss.values
    if lv.size and int(lv.max()) > 20:
        raise ValueError("loss-year values must be <= 20")
    keep = tc.inside & loss.valid_mask
    if region is not None:
        keep &= region.inside
    tc_in_region = tc.inside if region is None else tc.inside & region.inside

    def count(win):
        sl = win.slices
        hist = np.bincount(lv[sl][keep[sl]].astype(np.int64), minlength=21)
        return hist, int(tc_in_region[sl].sum())

    parts = map_tiles(count, tc.shape, 512, threads)
    hist = np.zeros(21, dtype=np.int64)
    n_tc = 0
    for h, n in parts:
        hist += h
        n_tc += n
    area = pixel_area_ha(transform)
    per_px = {2000 + v: int(hist[v]) for v in range(1, 21)}
    total_px = int(hist[1:].sum())
    return LossOverlap(
        per_year_ha={y: n * area for y, n in per_px.items()},
        per_year_pixels=per_px,
        total_overlap_ha=total_px * area,
        total_tc_ha=n_tc * area,
        fraction_of_tc=total_px / n_tc if n_tc else 0.0,
    )


# --------------------------------------------------------------------------
# protected-area buffer profile


@dataclass(frozen=True)
class BufferBand:
    lo_m: float
    hi_m: float
    tc_pixels: int
    total_pixels: int
    density: float
    ratio_to_inside: float | None
    cumulative_density: float
    cumulative_ratio: float | None


@dataclass(frozen=True)
class BufferProfile:
    bands: list[BufferBand]
    inside_density: float
    inside_pixels: int
    out_of_range_pixels: int
    region_pixels: int
    zero_inside_density: bool


def band_index(signed_m: np.ndarray, band_width_m: float) -> np.ndarray:
    """Band number counted outward from the boundary (0 = nearest).

    A distance exactly on an edge belongs to the band closer to zero, so band
    ``k`` holds ``k*w < |d| <= (k+1)*w``.
    """
    return np.ceil(np.abs(signed_m) / band_width_m).astype(np.int64) - 1


def pa_buffer_profile(
    tc: RegionMask,
    pa: RegionMask,
    band_width_m: float,
    max_dist_m: float,
    region: RegionMask | None = None,
) -> BufferProfile:
    """Tree-crop density in successive inward and outward bands around a PA.

    Inward bands come first, ordered from the deepest to the boundary, then the
    outward bands. Each band reports both its own density and the cumulative
    density from the boundary out to its far edge.
    """
    if band_width_m <= 0:
        raise ValueError("band_width_m must be positive")
    items = [tc, pa] + ([region] if region is not None else [])
    check_aligned(*items)
    sd = signed_distance(pa)
    considered = tc.valid & pa.valid
    if region is not None:
        considered &= region.inside
    is_tc = tc.inside & considered
    inside_pa = pa.inside & considered

    n_side = int(math.ceil(max_dist_m / band_width_m))
    finite = np.abs(sd) <= max(max_dist_m, band_width_m) + band_width_m
    idx = np.full(sd.shape, n_side, dtype=np.int64)
    idx[finite] = band_index(sd[finite], band_width_m)
    in_range = considered & (idx < n_side)
    # slot 0..n_side-1 inward (deepest first), n_side..2*n_side-1 outward
    slot = np.where(sd < 0, n_side - 1 - idx, n_side + idx)
    total = np.bincount(slot[in_range], minlength=2 * n_side)[: 2 * n_side]
    tcc = np.bincount(slot[in_range & is_tc], minlength=2 * n_side)[: 2 * n_side]

    inside_total = int(inside_pa.sum())
    inside_tc = int((inside_pa & is_tc).sum())
    inside_density = inside_tc / inside_total if inside_total else 0.0
    zero_inside = inside_tc == 0

    def ratio(d):
        return None if zero_inside else d / inside_density

    def cumulative(lo_slot, hi_slot):
        t = int(total[lo_slot:hi_slot].sum())
        return (int(tcc[lo_slot:hi_slot].sum()) / t) if t else 0.0

    bands = []
    for s in range(2 * n_side):
        if s < n_side:
            k = n_side - 1 - s
            lo, hi = -(k + 1) * band_width_m, -k * band_width_m
            cum = cumulative(s, n_side)
        else:
            k = s - n_side
            lo, hi = k * band_width_m, (k + 1) * band_width_m
            cum = cumulative(n_side, s + 1)
        t = int(total[s])
        d = int(tcc[s]) / t if t else 0.0
        bands.append(BufferBand(lo, hi, int(tcc[s]), t, d, ratio(d), cum, ratio(cum)))
    n_considered = int(considered.sum())
    return BufferProfile(
        bands=bands,
        inside_density=inside_density,
        inside_pixels=inside_total,
        out_of_range_pixels=n_considered - int(total.sum()),
        region_pixels=n_considered,
        zero_inside_density=zero_inside,
    )


# --------------------------------------------------------------------------
# hexagon aggregation

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class HexCell:
    q: int
    r: int
    tc_pixels: int
    total_pixels: int

    @property
    def density(self) -> float:
        return self.tc_pixels / self.total_pixels if self.total_pixels else 0.0


def hex_center(q, r, side_m: float):
    """Offset of a flat-top hexagon centre from the lattice origin."""
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return side_m * 1.5 * q, side_m * SQRT3 * (r + q / 2.0)


def axial_round(qf: np.ndarray, rf: np.ndarray):
    """Round fractional axial coordinates through cube coordinates."""
    sf = -qf - rf
    q = np.round(qf)
    r = np.round(rf)
    s = np.round(sf)
    dq = np.abs(q - qf)
    dr = np.abs(r - rf)
    ds = np.abs(s - sf)
    fix_q = (dq > dr) & (dq > ds)
    fix_r = ~fix_q & (dr > ds)
    q = np.where(fix_q, -r - s, q)
    r = np.where(fix_r, -q - s, r)
    return q.astype(np.int64), r.astype(np.int64)


def point_to_hex(dx, dy, side_m: float):
    """Axial (q, r) of the flat-top hexagon containing offsets ``(dx, dy)``."""
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    qf = (2.0 / 3.0) * dx / side_m
    rf = (-dx / 3.0 + SQRT3 / 3.0 * dy) / side_m
    return axial_round(qf, rf)


def hex_aggregate(tc: RegionMask, side_m: float, region: RegionMask | None = None) -> list[HexCell]:
    """Tree-crop density per flat-top hexagon anchored at the grid origin.

    Every valid pixel centre lands in exactly one hexagon. Cells are returned
    sorted by ``(q, r)``.
    """
    if side_m <= 0:
        raise ValueError("side_m must be positive")
    if region is not None:
        check_aligned(tc, region)
    valid = tc.valid if region is None else tc.valid & region.inside
    rows, cols = np.nonzero(valid)
    t = tc.transform
    x, y = t.pixel_to_world(rows, cols)
    q, r = point_to_hex(x - t.origin_x, y - t.origin_y, side_m)
    is_tc = tc.inside[rows, cols]
    keys = np.stack([q, r], axis=1)
    if keys.size == 0:
        return []
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    totals = np.bincount(inv, minlength=len(uniq))
    tcs = np.bincount(inv, weights=is_tc.astype(np.float64), minlength=len(uniq))
    return [
        HexCell(int(qq), int(rr), int(round(n_tc)), int(n))
        for (qq, rr), n_tc, n in zip(uniq, tcs, totals)
    ]


# --------------------------------------------------------------------------
# map agreement


@dataclass(frozen=True)
class Agreement:
    area_11: float
    area_10: float
    area_01: float
    area_00: float
    pixels: dict[str, int]


def map_agreement(a: RegionMask, b: RegionMask, region: RegionMask | None = None) -> Agreement:
    """2x2 agreement areas (ha) between two binary maps within a region."""
    items = [a, b] + ([region] if region is not None else [])
    transform = check_aligned(*items)
    considered = a.valid & b.valid
    if region is not None:
        considered &= region.inside
    ai = a.inside[considered]
    bi = b.inside[considered]
    code = ai.astype(np.int64) * 2 + bi.astype(np.int64)
    counts = np.bincount(code, minlength=4)
    px = {"11": int(counts[3]), "10": int(counts[2]), "01": int(counts[1]), "00": int(counts[0])}
    area = pixel_area_ha(transform)
    return Agreement(px["11"] * area, px["10"] * area, px["01"] * area, px["00"] * area, px)
