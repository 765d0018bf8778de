"""Synthetic end-to-end run used for determinism checks and demos.

The scene is generated from a seed: a smooth tree-crop "truth", optical and
radar observation stacks with clouds, a loss-year raster, a protected area and
a second forest map to compare against. Model weights are freshly initialized,
so the resulting map carries no skill; the point is that every stage runs and
that artifacts depend only on the seed.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import analytics, assess, calibrate, composite, model, sampler
from .raster import Grid, GridTransform, RegionMask, encode_grid

PIXEL_SIZE = 10.0
YEAR = 2020


@dataclass(frozen=True)
class SyntheticScene:
    transform: GridTransform
    truth: np.ndarray
    optical: composite.ObservationStack
    radar_asc: composite.ObservationStack
    radar_desc: composite.ObservationStack
    incidence: Grid
    loss: Grid
    pa: RegionMask
    other_forest: RegionMask


def _smooth_field(rng, shape, sigma):
    f = ndimage.gaussian_filter(rng.normal(size=shape), sigma)
    return (f - f.mean()) / f.std()


def synthetic_scene(seed: int = 0, height: int = 128, width: int = 256) -> SyntheticScene:
    rng = sampler.make_rng(seed, 0x5CE)
    t = GridTransform(500_000.0, 9_000_000.0, PIXEL_SIZE, "synthetic-equal-area")
    shape = (height, width)
    truth = _smooth_field(rng, shape, 6) > 1.0

    optical = []
    for month in range(1, 13):
        date = dt.date(YEAR, month, 15)
        season = np.sin(2 * np.pi * month / 12)
        bands = []
        for b in range(10):
            v = 800 + 60 * b + 400 * truth * (1 if b >= 6 else -0.3) + 80 * season
            v = v + rng.normal(0, 40, size=shape)
            bands.append(Grid(np.clip(v, 0, 65535).astype(np.uint16), t))
        cover = _smooth_field(rng, shape, 10) > rng.uniform(-0.5, 2.0)
        optical.append(composite.Observation(date, tuple(bands), cover))

    def radar_pass(offset):
        obs = []
        for k, month in enumerate(range(1, 13, 2)):
            date = dt.date(YEAR, month, 3 + offset)
            vv = -9 + 2.5 * truth + rng.normal(0, 1.5, size=shape)
            vh = -16 + 3.0 * truth + rng.normal(0, 1.5, size=shape)
            obs.append(composite.Observation(date, (Grid(vv.astype(np.float32), t), Grid(vh.astype(np.float32), t))))
        return composite.ObservationStack(tuple(obs), "radar", ("VV", "VH"))

    incidence = Grid((35 + 5 * np.linspace(0, 1, width)[None, :] * np.ones(shape)).astype(np.float32), t)

    loss_years = rng.integers(1, 21, size=shape)
    loss_present = _smooth_field(rng, shape, 4) > 0.6
    loss = Grid(np.where(loss_present, loss_years, 0).astype(np.uint8), t)

    pa = np.zeros(shape, dtype=bool)
    pa[height // 4 : 3 * height // 4, width // 2 : width // 2 + height // 2] = True

    forest = truth ^ (rng.random(shape) < 0.1)
    return SyntheticScene(
        transform=t,
        truth=truth,
        optical=composite.ObservationStack(tuple(optical), "optical", tuple(f"B{i}" for i in range(10))),
        radar_asc=radar_pass(0),
        radar_desc=radar_pass(1),
        incidence=incidence,
        loss=loss,
        pa=RegionMask.from_bool(pa, t, "pa"),
        other_forest=RegionMask.from_bool(forest, t, "other"),
    )


def _csv(header, rows) -> bytes:
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    return ("\n".join(lines) + "\n").encode("utf-8")


def synthetic_pipeline(seed: int = 0, threads: int = 1, members: int = 5, height: int = 128,
                       width: int = 256) -> dict[str, bytes]:
    """composite -> sample -> model-forward -> fuse -> threshold -> assess -> analytics.

    Returns every artifact as ``{filename: bytes}`` plus ``digests.json``.
    """
    scene = synthetic_scene(seed, height, width)
    out: dict[str, bytes] = {}
    t = scene.transform

    # composites
    optical = composite.cloud_filter(scene.optical)
    s2c = composite.seasonal_composite(optical, "median")
    s1c = composite.seasonal_composite(
        composite.stack_radar_channels(scene.radar_asc, scene.radar_desc, scene.incidence), "mean"
    )
    s2n = composite.normalize(s2c, composite.robust_stats([s2c]))
    s1n = composite.normalize(s1c, composite.robust_stats([s1c]))
    out["composite_summary.json"] = _json(
        {"optical_kept": len(optical), "optical_input": len(scene.optical),
         "s2_fill": [int(f.sum()) for f in s2c.fill], "s1_fill": [int(f.sum()) for f in s1c.fill]}
    )

    # ensemble forward + fusion
    cfg = model.ModelConfig()
    logits = []
    for k in range(members):
        params = model.init_params(cfg, seed * 1000 + k)
        lg = model.forward_tiled(s1n.to_model_input(), s2n.to_model_input(), params, cfg, threads=threads)
        logits.append(lg.transpose(2, 0, 1))
    from .cli import CLASS_LABELS

    pf = calibrate.ensemble_fuse(logits, CLASS_LABELS, t)
    ent = calibrate.entropy_map(pf)
    tc = calibrate.threshold_mask(pf, "tree_crop")
    out["entropy.ntg"] = encode_grid(ent)
    out["tc_mask.ntg"] = encode_grid(tc.grid)

    # sampling design on the map
    buf = sampler.buffer_stratum(tc, PIXEL_SIZE)
    rest = RegionMask.from_bool(~tc.inside & ~buf.inside, t, "rest")
    ha = t.pixel_area / analytics.M2_PER_HA
    strata = (
        sampler.StratumSpec("tree_crop", tc, "tree_crop", tc.inside.sum() * ha),
        sampler.StratumSpec("non_tree_crop", rest, "non_tree_crop", rest.inside.sum() * ha),
        sampler.StratumSpec("buffer", buf, "non_tree_crop", buf.inside.sum() * ha),
    )
    alloc = sampler.allocate(200, sampler.EqualSplit())
    alloc["buffer"] = 60
    points = sampler.stratified_sample(sampler.SampleDesign(strata, alloc, seed))
    rows, cols = t.world_to_pixel([p.x for p in points], [p.y for p in points])
    ref = np.where(scene.truth[rows, cols], "tree_crop", "non_tree_crop")
    points = [replace(p, ref_class=str(r)) for p, r in zip(points, ref)]
    points = sampler.geo_split(points, cell_km=0.32, seed=seed)
    out["samples.csv"] = sampler.format_points(points).encode("utf-8")

    # design-based assessment
    ref_classes = ("tree_crop", "non_tree_crop")
    counts = np.zeros((3, 2), dtype=np.int64)
    ids = [s.stratum_id for s in strata]
    for p in points:
        counts[ids.index(p.stratum_id), ref_classes.index(p.ref_class)] += 1
    em = assess.ErrorMatrix(tuple(ids), ref_classes, counts, np.array([s.area_ha for s in strata]),
                            {s.stratum_id: s.map_class for s in strata})
    out["assessment.json"] = assess.dumps_report(assess.assessment_report(em)).encode("utf-8")

    # calibration against the reference points
    conf = np.clip(1.0 - ent.values[rows, cols].astype(np.float64), 0.0, 1.0)
    correct = tc.inside[rows, cols] == (ref == "tree_crop")
    out["reliability.csv"] = calibrate.ece(conf, correct).to_csv().encode("utf-8")

    # analytics
    lo = analytics.loss_overlap(tc, scene.loss, None, threads)
    out["loss_by_year.csv"] = _csv(("year", "area_ha"), [(y, repr(a)) for y, a in lo.per_year_ha.items()])
    prof = analytics.pa_buffer_profile(tc, scene.pa, 50.0, 300.0)
    out["pa_profile.csv"] = _csv(
        ("band_lo_m", "band_hi_m", "density", "ratio"),
        [(repr(b.lo_m), repr(b.hi_m), repr(b.density), "" if b.ratio_to_inside is None else repr(b.ratio_to_inside))
         for b in prof.bands],
    )
    cells = analytics.hex_aggregate(tc, 200.0)
    out["hex.csv"] = _csv(("q", "r", "density"), [(c.q, c.r, repr(c.density)) for c in cells])
    ag = analytics.map_agreement(tc, scene.other_forest)
    out["agreement.json"] = _json({"area_11": ag.area_11, "area_10": ag.area_10,
                                   "area_01": ag.area_01, "area_00": ag.area_00})

    out["digests.json"] = _json({k: hashlib.sha256(v).hexdigest() for k, v in sorted(out.items())})
    return out


def _json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")
