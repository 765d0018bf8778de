"""Command-line entry point.

Every subcommand reads a JSON config (one block per subcommand), runs one
module chain and writes its artifacts into ``--out``. Outputs are built in
memory first and each file is written via temp file + rename, so a failing
run leaves nothing behind.

Exit codes: 0 ok, 2 validation, 3 I/O, 4 data/estimation, 1 anything else.
Errors are reported on stderr as one JSON line ``{"error": ..., "message": ...}``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as dt
import hashlib
import io
import json
import os
import sys
from typing import Callable

import numpy as np

from . import analytics, assess, calibrate, composite, model, raster, sampler
from .raster import Grid, RegionMask, atomic_write_bytes, encode_grid, read_grid

CLASS_LABELS = (
    "tree_crop",
    "natural_forest",
    "planted_forest",
    "other_vegetation",
    "built",
    "water",
    "ice_snow",
    "bare",
)

DEFAULTS: dict[str, dict] = {
    "composite": {
        "optical": None,
        "radar_ascending": None,
        "radar_descending": None,
        "incidence": None,
        "windows": None,
        "max_cloud_fraction": composite.DEFAULT_MAX_CLOUD,
        "stats": None,
        "epsilon_floor": composite.DEFAULT_MAD_FLOOR,
    },
    "sample": {
        "tc_mask": None,
        "region_id": "",
        "buffer_radius_m": None,
        "n": None,
        "target_se": 0.005,
        "strata_sd": None,
        "buffer_per_region": 100,
        "seed": 0,
    },
    "split": {"points": None, "cell_km": 100.0, "ratios": [8, 1, 1], "seed": 0},
    "assess": {"counts": None, "strata": None},
    "area": {"counts": None, "strata": None, "regions": None, "threshold_weight": assess.DEFAULT_THRESHOLD_WEIGHT},
    "calibrate": {
        "members": None,
        "class_labels": list(CLASS_LABELS),
        "positive": "tree_crop",
        "points": None,
        "scores": None,
        "bins": calibrate.DEFAULT_BINS,
        "threshold": "argmax",
    },
    "loss-overlap": {"tc": None, "loss": None, "region": None},
    "pa-profile": {"tc": None, "pa": None, "region": None, "band_width_m": 500.0, "max_dist_m": 5000.0},
    "hex": {"tc": None, "region": None, "side_m": 80_000.0},
    "agree": {"a": None, "b": None, "region": None},
    "model-forward": {"s1": None, "s2": None, "params": None, "model": {}, "window": None},
    "param-count": {"model": {}},
}

SUBCOMMANDS = tuple(DEFAULTS) + ("pipeline",)


class CLIError(Exception):
    category = "internal"
    code = 1


class ValidationError(CLIError):
    category = "validation"
    code = 2


class IOFailure(CLIError):
    category = "io"
    code = 3


class DataError(CLIError):
    category = "data"
    code = 4


# --------------------------------------------------------------------------
# config handling


def merge_config(subcommand: str, user: dict | None, overrides=()) -> dict:
    """Validate the user block against defaults, apply ``key=json`` overrides."""
    cfg = copy.deepcopy(DEFAULTS[subcommand])
    user = user or {}
    unknown = set(user) - set(cfg)
    if unknown:
        raise ValidationError(f"unknown config keys for {subcommand}: {sorted(unknown)}")
    cfg.update(copy.deepcopy(user))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or key not in cfg:
            raise ValidationError(f"bad override {item!r}")
        try:
            cfg[key] = json.loads(value)
        except json.JSONDecodeError:
            cfg[key] = value
    return cfg


def load_config(path, subcommand: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IOFailure(str(exc)) from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    unknown = set(doc) - set(SUBCOMMANDS)
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    block = doc.get(subcommand, {})
    if not isinstance(block, dict):
        raise ValidationError(f"config section {subcommand!r} must be an object")
    base = os.path.dirname(os.path.abspath(path))
    return {k: _resolve(base, v) for k, v in block.items()}


def _resolve(base, value):
    """Make relative path strings in the config relative to the config file."""
    if isinstance(value, str) and not os.path.isabs(value):
        candidate = os.path.join(base, value)
        if os.path.exists(candidate):
            return candidate
    if isinstance(value, list):
        return [_resolve(base, v) for v in value]
    return value


def require(cfg: dict, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise ValidationError(f"missing required config key {k!r}")


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_digests(cfg: dict) -> dict:
    out = {}

    def visit(key, v):
        if isinstance(v, str) and os.path.isfile(v):
            out[f"{key}:{os.path.basename(v)}"] = digest(v)
        elif isinstance(v, list):
            for x in v:
                visit(key, x)

    for k, v in sorted(cfg.items()):
        visit(k, v)
    return out


def dumps(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _mask(path, region_id="") -> RegionMask:
    return RegionMask(read_grid(path), region_id)


# --------------------------------------------------------------------------
# stages; each returns {relative filename: bytes}


def run_composite(cfg, ctx) -> dict[str, bytes]:
    windows = None
    if cfg["windows"]:
        windows = [(dt.date.fromisoformat(a), dt.date.fromisoformat(b)) for a, b in cfg["windows"]]
    outputs: dict[str, bytes] = {}
    summary: dict = {"max_cloud_fraction": cfg["max_cloud_fraction"]}
    products = []
    if cfg["optical"]:
        stack = composite.load_stack(cfg["optical"])
        kept = composite.cloud_filter(stack, cfg["max_cloud_fraction"])
        summary["optical_observations"] = {"input": len(stack), "kept": len(kept)}
        products.append(("s2", composite.seasonal_composite(kept, "median", windows)))
    if cfg["radar_ascending"] or cfg["radar_descending"]:
        require(cfg, "radar_ascending", "radar_descending", "incidence")
        asc = composite.load_stack(cfg["radar_ascending"])
        desc = composite.load_stack(cfg["radar_descending"])
        stack = composite.stack_radar_channels(asc, desc, read_grid(cfg["incidence"]))
        products.append(("s1", composite.seasonal_composite(stack, "mean", windows)))
    if not products:
        raise ValidationError("composite needs an optical and/or radar input")
    stats_doc = {}
    for name, comp in products:
        stats = composite.robust_stats([comp], cfg["epsilon_floor"])
        norm = composite.normalize(comp, stats)
        stats_doc[name] = {
            "median": stats.median.tolist(),
            "mad": stats.mad.tolist(),
            "floored": stats.floored.tolist(),
        }
        outputs.update(composite_files(name, norm))
        summary[f"{name}_fill_pixels"] = [int(f.sum()) for f in comp.fill]
    outputs["channel_stats.json"] = dumps(stats_doc)
    outputs["composite_summary.json"] = dumps(summary)
    return outputs


def composite_files(name: str, comp: composite.SeasonalComposite) -> dict[str, bytes]:
    """NTG1 grids per season and band plus a manifest ``<name>_composite.json``."""
    files = {}
    seasons = []
    for s in range(comp.data.shape[0]):
        bands = []
        for b, grid in enumerate(comp.season_grids(s)):
            fname = f"{name}_t{s}_{comp.band_names[b]}.ntg"
            files[fname] = encode_grid(grid)
            bands.append(fname)
        seasons.append(bands)
    files[f"{name}_composite.json"] = dumps(
        {
            "band_names": list(comp.band_names),
            "reducer": comp.reducer,
            "windows": [[a.isoformat(), b.isoformat()] for a, b in comp.windows],
            "seasons": seasons,
        }
    )
    return files


def load_composite_input(path) -> np.ndarray:
    """``(T, H, W, C)`` float32 model input from a composite manifest."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    seasons = []
    for bands in doc["seasons"]:
        seasons.append(np.stack([read_grid(os.path.join(base, f)).values for f in bands], axis=-1))
    return np.stack(seasons).astype(np.float32)


def run_sample(cfg, ctx) -> dict[str, bytes]:
    require(cfg, "tc_mask")
    tc = _mask(cfg["tc_mask"], cfg["region_id"])
    radius = cfg["buffer_radius_m"]
    if radius is None:
        radius = sampler.buffer_radius(cfg["region_id"])
    buf = sampler.buffer_stratum(tc, radius)
    rest = tc.valid & ~tc.inside & ~buf.inside
    rest_mask = RegionMask.from_bool(rest, tc.transform, "non_tree_crop", tc.valid)
    n = cfg["n"]
    if n is None:
        require(cfg, "strata_sd")
        n_tc, n_rest = int(tc.inside.sum()), int(rest.sum())
        W = assess.stratum_weights([n_tc, n_rest])
        n = sampler.sample_size(cfg["target_se"], list(zip(W, cfg["strata_sd"])))
    alloc = sampler.allocate(int(n), sampler.EqualSplit(), cfg["buffer_per_region"], ["r"])
    alloc[sampler.BUFFER] = alloc.pop(f"{sampler.BUFFER}/r")
    ps = tc.transform.pixel_area / analytics.M2_PER_HA
    strata = (
        sampler.StratumSpec(sampler.TREE_CROP, tc, sampler.TREE_CROP, tc.inside.sum() * ps),
        sampler.StratumSpec(sampler.NON_TREE_CROP, rest_mask, sampler.NON_TREE_CROP, rest.sum() * ps),
        sampler.StratumSpec(sampler.BUFFER, buf, sampler.NON_TREE_CROP, buf.inside.sum() * ps),
    )
    design = sampler.SampleDesign(strata, alloc, ctx["seed"] if ctx["seed"] is not None else cfg["seed"])
    try:
        points = sampler.stratified_sample(design)
    except sampler.SamplingError as exc:
        raise DataError(str(exc)) from None
    strata_rows = [(s.stratum_id, s.map_class, repr(float(s.area_ha))) for s in strata]
    return {
        "samples.csv": sampler.format_points(points).encode("utf-8"),
        "strata.csv": csv_bytes(("stratum_id", "map_class", "area_ha"), strata_rows),
        "buffer.ntg": encode_grid(buf.grid),
        "sample_summary.json": dumps({"allocation": alloc, "buffer_radius_m": radius, "n": int(n)}),
    }


def run_split(cfg, ctx) -> dict[str, bytes]:
    require(cfg, "points")
    points = sampler.read_points(cfg["points"])
    seed = ctx["seed"] if ctx["seed"] is not None else cfg["seed"]
    out = sampler.geo_split(points, cfg["cell_km"], tuple(cfg["ratios"]), seed)
    counts = {s: sum(p.split == s for p in out) for s in ("train", "val", "test")}
    return {"samples_split.csv": sampler.format_points(out).encode("utf-8"), "split_summary.json": dumps(counts)}


def run_assess(cfg, ctx) -> dict[str, bytes]:
    require(cfg, "counts", "strata")
    m = assess.read_error_matrix(cfg["counts"], cfg["strata"])
    report = assess.assessment_report(m)
    report["inputs"] = input_digests(cfg)
    return {"assessment.json": dumps(report)}


def run_area(cfg, ctx) -> dict[str, bytes]:
    out: dict = {}
    if cfg["counts"] and cfg["strata"]:
        m = assess.read_error_matrix(cfg["counts"], cfg["strata"])
        out["area_estimates"] = assess.assessment_report(m).get("area_estimates", [])
    if ctx.get("scale"):
        require(cfg, "regions")
        res = assess.scaling_adjustment(assess.read_region_areas(cfg["regions"]), cfg["threshold_weight"])
        out["scaling"] = {
            "factor": res.factor,
            "factor_rounded": round(res.factor, 2),
            "initial_used_ha": res.initial_used_ha,
            "adjusted_used_ha": res.adjusted_used_ha,
            "used_regions": list(res.used_regions),
            "scaled_ha": res.scaled,
            "total_ha": res.total_ha,
            "total_mha": res.total_ha / 1e6,
        }
    if not out:
        raise ValidationError("area needs counts+strata and/or --scale with regions")
    out["inputs"] = input_digests(cfg)
    return {"area.json": dumps(out)}


def _members(cfg):
    members = []
    for paths in cfg["members"]:
        grids = [read_grid(p) for p in paths]
        members.append(np.stack([g.values for g in grids]))
    first = read_grid(cfg["members"][0][0])
    return members, first


def run_calibrate(cfg, ctx) -> dict[str, bytes]:
    outputs: dict[str, bytes] = {}
    if cfg["scores"]:
        with open(cfg["scores"], newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        conf = [float(r["confidence"]) for r in rows]
        ok = [r["correct"].strip().lower() in ("1", "true", "t") for r in rows]
    else:
        require(cfg, "members", "points")
        members, first = _members(cfg)
        pf = calibrate.ensemble_fuse(members, cfg["class_labels"], first.transform, first.valid_mask)
        mask = calibrate.threshold_mask(pf, cfg["positive"], cfg["threshold"])
        ent = calibrate.entropy_map(pf)
        outputs["entropy.ntg"] = encode_grid(ent)
        outputs["tc_mask.ntg"] = encode_grid(mask.grid)
        points = [p for p in sampler.read_points(cfg["points"]) if p.ref_class != sampler.UNKNOWN]
        rows_, cols_ = first.transform.world_to_pixel([p.x for p in points], [p.y for p in points])
        pred = mask.inside[rows_, cols_]
        ref = np.array([p.ref_class == cfg["positive"] for p in points])
        conf = 1.0 - ent.values[rows_, cols_].astype(np.float64)
        conf = np.clip(conf, 0.0, 1.0)
        ok = pred == ref
    table = calibrate.ece(conf, ok, cfg["bins"])
    outputs["reliability.csv"] = table.to_csv().encode("utf-8")
    outputs["calibration.json"] = dumps({"ece": table.ece, "n": table.n, "bins": cfg["bins"]})
    return outputs


def run_loss_overlap(cfg, ctx) -> dict[str, bytes]:
    require(cfg, "tc", "loss")
    region = _mask(cfg["region"]) if cfg["region"] else None
    res = analytics.loss_overlap(_mask(cfg["tc"]), read_grid(cfg["loss"]), region, ctx["threads"])
    rows = [(y, repr(a)) for y, a in res.per_year_ha.items()]
    summary = {
        "total_overlap_ha": res.total_overlap_ha,
        "total_tc_ha": res.total_tc_ha,
        "fraction_of_tc": res.fraction_of_tc,
        "inputs": input_digests(cfg),
    }
    return {"loss_by_year.csv": csv_bytes(("year", "area_ha"), rows), "loss_overlap.json": dumps(summary)}


def run_pa_profile(cfg, ctx) -> dict[str, bytes]:
    require(cfg, "tc", "pa")
    tc, pa = _mask(cfg["tc"]), _mask(cfg["pa"])
    region = _mask(cfg["region"]) if cfg["region"] else None
    prof = analytics.pa_buffer_profile(tc, pa, cfg["band_width_m"], cfg["max_dist_m"], region)

    def fmt(v):
        return "" if v is None else repr(v)

    rows = [
        (repr(b.lo_m), repr(b.hi_m), repr(b.density), fmt(b.ratio_to_inside), b.tc_pixels, b.total_pixels,
         repr(b.cumulative_density), fmt(b.cumulative_ratio))
        for b in prof.bands
    ]
    header = ("band_lo_m", "band_hi_m", "density", "ratio", "tc_pixels", "total_pixels",
              "cumulative_density", "cumulative_ratio")
    outputs = {
        "pa_profile.csv": csv_bytes(header, rows),
        "pa_profile.json": dumps(
            {
                "inside_density": prof.inside_density,
                "inside_pixels": prof.inside_pixels,
                "zero_inside_density": prof.zero_inside_density,
                "out_of_range_pixels": prof.out_of_range_pixels,
                "region_pixels": prof.region_pixels,
            }
        ),
    }
    if ctx["format"] == "ntg1":
        sd = analytics.signed_distance(pa)
        outputs["signed_distance.ntg"] = encode_grid(Grid(sd.astype(np.float32), pa.transform, pa.valid, True))
    return outputs


def run_hex(cfg, ctx) -> dict[str, bytes]:
    require(cfg, "tc")
    region = _mask(cfg["region"]) if cfg["region"] else None
    cells = analytics.hex_aggregate(_mask(cfg["tc"]), cfg["side_m"], region)
    rows = [(c.q, c.r, repr(c.density), c.tc_pixels, c.total_pixels) for c in cells]
    return {"hex.csv": csv_bytes(("q", "r", "density", "tc_pixels", "total_pixels"), rows)}


def run_agree(cfg, ctx) -> dict[str, bytes]:
    require(cfg, "a", "b")
    region = _mask(cfg["region"]) if cfg["region"] else None
    ag = analytics.map_agreement(_mask(cfg["a"]), _mask(cfg["b"]), region)
    doc = {
        "area_11_ha": ag.area_11,
        "area_10_ha": ag.area_10,
        "area_01_ha": ag.area_01,
        "area_00_ha": ag.area_00,
        "pixels": ag.pixels,
        "inputs": input_digests(cfg),
    }
    return {"agreement.json": dumps(doc)}


def _model_config(cfg) -> model.ModelConfig:
    block = cfg["model"]
    if isinstance(block, str):
        with open(block, encoding="utf-8") as fh:
            block = json.load(fh)
    try:
        return model.ModelConfig.from_dict(block)
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from None


def run_model_forward(cfg, ctx) -> dict[str, bytes]:
    require(cfg, "s1", "s2")
    if cfg["params"]:
        params, mcfg = model.load_params(cfg["params"])
    else:
        mcfg = _model_config(cfg)
        params = model.init_params(mcfg, ctx["seed"] or 0)
    s1 = load_composite_input(cfg["s1"])
    s2 = load_composite_input(cfg["s2"])
    logits = model.forward_tiled(s1, s2, params, mcfg, cfg["window"], ctx["threads"])
    with open(cfg["s2"], encoding="utf-8") as fh:
        first = json.load(fh)["seasons"][0][0]
    transform = read_grid(os.path.join(os.path.dirname(os.path.abspath(cfg["s2"])), first)).transform
    outputs = {}
    names = []
    for k in range(logits.shape[-1]):
        name = f"logits_{k}.ntg"
        outputs[name] = encode_grid(Grid(logits[..., k].astype(np.float32), transform))
        names.append(name)
    outputs["logits.json"] = dumps({"classes": names, "param_count": model.param_count(mcfg)})
    return outputs


def run_param_count(cfg, ctx) -> dict[str, bytes]:
    mcfg = _model_config(cfg)
    doc = {
        "param_count": model.param_count(mcfg),
        "encoder_layer": model.layer_param_total(mcfg, "encoder"),
        "decoder_layer": model.layer_param_total(mcfg, "decoder"),
        "config": mcfg.to_dict(),
    }
    return {"param_count.json": dumps(doc)}


def run_pipeline(cfg, ctx) -> dict[str, bytes]:
    from .pipeline import synthetic_pipeline

    return synthetic_pipeline(seed=ctx["seed"] or 0, threads=ctx["threads"])


STAGES: dict[str, Callable] = {
    "composite": run_composite,
    "sample": run_sample,
    "split": run_split,
    "assess": run_assess,
    "area": run_area,
    "calibrate": run_calibrate,
    "loss-overlap": run_loss_overlap,
    "pa-profile": run_pa_profile,
    "hex": run_hex,
    "agree": run_agree,
    "model-forward": run_model_forward,
    "param-count": run_param_count,
    "pipeline": run_pipeline,
}


def write_outputs(outputs: dict[str, bytes], out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in sorted(outputs):
        path = os.path.join(out_dir, name)
        atomic_write_bytes(path, outputs[name])
        written.append(path)
    return written


def run(subcommand: str, config: dict | None = None, overrides=(), *, out=None, seed=None,
        threads: int = 1, fmt: str = "csv", scale: bool = False) -> dict[str, bytes]:
    """Run one subcommand and return its artifacts; write them if ``out`` is set."""
    if subcommand not in STAGES:
        raise ValidationError(f"unknown subcommand {subcommand!r}")
    if fmt not in ("csv", "ntg1"):
        raise ValidationError("--format must be csv or ntg1")
    cfg = merge_config(subcommand, config, overrides) if subcommand != "pipeline" else {}
    ctx = {"seed": seed, "threads": max(1, int(threads)), "format": fmt, "scale": scale}
    try:
        outputs = STAGES[subcommand](cfg, ctx)
    except CLIError:
        raise
    except raster.RasterError as exc:
        raise DataError(f"{type(exc).__name__}: {exc}") from None
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        raise IOFailure(str(exc)) from None
    except (ValueError, KeyError, sampler.SamplingError) as exc:
        raise DataError(f"{type(exc).__name__}: {exc}") from None
    if out is not None:
        write_outputs(outputs, out)
    return outputs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treecrop", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON config file with one section per subcommand")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="overrides every seed in the config")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--format", choices=("csv", "ntg1"), default="csv")
    parser.add_argument("--scale", action="store_true", help="area: apply the imbalance scaling factor")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=JSON", help="override a config key")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        user = load_config(args.config, args.subcommand) if args.subcommand != "pipeline" else {}
        run(args.subcommand, user, args.set, out=args.out, seed=args.seed,
            threads=args.threads, fmt=args.format, scale=args.scale)
    except CLIError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return IOFailure.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
