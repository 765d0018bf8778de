import csv
import json
from importlib import resources

import numpy as np
import pytest

from treecrop import cli
from treecrop.raster import Grid, GridTransform, read_grid, write_grid

DATA = resources.files("treecrop") / "data"
T = GridTransform(0.0, 3200.0, 100.0, "test-crs")
SMALL_MODEL = {"embed_dim": 12, "heads": 2, "image_size": 16, "spatial_layers": 1, "temporal_layers": 1,
               "decoder_layers": 1}


def main(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr().err


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def reference_config(tmp_path):
    return write_json(tmp_path / "cfg.json", {
        "assess": {"counts": str(DATA / "reference_counts.csv"), "strata": str(DATA / "reference_strata.csv")},
        "area": {"counts": str(DATA / "reference_counts.csv"), "strata": str(DATA / "reference_strata.csv"),
                 "regions": str(DATA / "regional_scaling.csv")},
    })


def test_assess_reference(tmp_path, reference_config, capsys):
    code, err = main(capsys, "assess", "--config", reference_config, "--out", str(tmp_path / "o"))
    assert code == 0, err
    rep = json.loads((tmp_path / "o" / "assessment.json").read_text())
    assert round(rep["overall_accuracy"], 4) == 0.9957
    assert len(rep["inputs"]) == 2


def test_area_scale(tmp_path, reference_config, capsys):
    code, err = main(capsys, "area", "--config", reference_config, "--scale", "--out", str(tmp_path / "o"))
    assert code == 0, err
    doc = json.loads((tmp_path / "o" / "area.json").read_text())
    assert doc["scaling"]["factor_rounded"] == 1.26
    assert round(doc["scaling"]["total_mha"], 2) == 10.99


def test_unknown_key_fails_without_outputs(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"assess": {"counts": "x", "strata": "y", "bogus": 1}})
    out = tmp_path / "o"
    code, err = main(capsys, "assess", "--config", cfg, "--out", str(out))
    assert code == 2
    assert json.loads(err)["error"] == "validation"
    assert not out.exists()


def test_unknown_section_and_override(tmp_path, reference_config, capsys):
    cfg = write_json(tmp_path / "c.json", {"nope": {}})
    assert main(capsys, "assess", "--config", cfg, "--out", str(tmp_path / "o"))[0] == 2
    assert main(capsys, "assess", "--config", reference_config, "--set", "zzz=1", "--out", str(tmp_path / "o"))[0] == 2
    assert not (tmp_path / "o").exists()


def test_missing_input_is_io_error(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"assess": {"counts": str(tmp_path / "none.csv"),
                                                      "strata": str(tmp_path / "none2.csv")}})
    code, err = main(capsys, "assess", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 3 and json.loads(err)["error"] == "io"


def test_bad_data_is_data_error(tmp_path, capsys):
    (tmp_path / "s.csv").write_text("stratum_id,map_class,area_ha\na,a,1\n")
    (tmp_path / "c.csv").write_text("stratum_id,ref_class,count\nb,a,3\n")
    cfg = write_json(tmp_path / "c.json", {"assess": {"counts": str(tmp_path / "c.csv"),
                                                      "strata": str(tmp_path / "s.csv")}})
    code, err = main(capsys, "assess", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 4


def test_param_count(tmp_path, capsys):
    assert main(capsys, "param-count", "--out", str(tmp_path))[0] == 0
    doc = json.loads((tmp_path / "param_count.json").read_text())
    assert doc["param_count"] == 3_337_280
    code, _ = main(capsys, "param-count", "--set", 'model={"depth": 2}', "--out", str(tmp_path / "x"))
    assert code == 2


@pytest.fixture
def scene(tmp_path):
    rng = np.random.default_rng(0)
    shape = (32, 32)
    d = tmp_path / "scene"
    d.mkdir()
    truth = np.zeros(shape, np.uint8)
    truth[4:14, 6:20] = 1
    write_grid(Grid(truth, T), d / "tc.ntg")
    write_grid(Grid((rng.random(shape) < 0.3).astype(np.uint8), T), d / "other.ntg")
    write_grid(Grid(rng.integers(0, 21, shape).astype(np.uint8), T), d / "loss.ntg")
    pa = np.zeros(shape, np.uint8)
    pa[10:22, 10:22] = 1
    write_grid(Grid(pa, T), d / "pa.ntg")
    write_grid(Grid(np.full(shape, 38.0, np.float32), T), d / "inc.ntg")

    obs = []
    for k, month in enumerate((2, 3, 5, 8, 11)):
        bands = []
        for b in range(10):
            name = f"o{k}_b{b}.ntg"
            write_grid(Grid(rng.integers(100, 3000, shape).astype(np.uint16), T), d / name)
            bands.append(name)
        cloud = f"o{k}_cloud.ntg"
        write_grid(Grid((rng.random(shape) < (0.9 if k == 1 else 0.1)).astype(np.uint8), T), d / cloud)
        obs.append({"date": f"2020-{month:02d}-10", "bands": bands, "cloud_mask": cloud})
    write_json(d / "optical.json", {"modality": "optical", "band_names": [f"B{i}" for i in range(10)],
                                    "observations": obs})
    for tag in ("asc", "desc"):
        robs = []
        for k, month in enumerate((1, 4, 7, 10)):
            names = []
            for pol in ("VV", "VH"):
                name = f"{tag}{k}_{pol}.ntg"
                write_grid(Grid(rng.normal(-12, 2, shape).astype(np.float32), T), d / name)
                names.append(name)
            robs.append({"date": f"2020-{month:02d}-05", "bands": names})
        write_json(d / f"{tag}.json", {"modality": "radar", "band_names": ["VV", "VH"], "observations": robs})

    cfg = {
        "composite": {"optical": "optical.json", "radar_ascending": "asc.json", "radar_descending": "desc.json",
                      "incidence": "inc.ntg"},
        "sample": {"tc_mask": "tc.ntg", "buffer_radius_m": 100.0, "n": 40, "buffer_per_region": 10},
        "loss-overlap": {"tc": "tc.ntg", "loss": "loss.ntg"},
        "pa-profile": {"tc": "tc.ntg", "pa": "pa.ntg", "band_width_m": 200.0, "max_dist_m": 600.0},
        "hex": {"tc": "tc.ntg", "side_m": 500.0},
        "agree": {"a": "tc.ntg", "b": "other.ntg"},
    }
    write_json(d / "config.json", cfg)
    return d


def test_composite_and_model_forward(scene, tmp_path, capsys):
    out = tmp_path / "comp"
    code, err = main(capsys, "composite", "--config", str(scene / "config.json"), "--out", str(out))
    assert code == 0, err
    summary = json.loads((out / "composite_summary.json").read_text())
    assert summary["optical_observations"] == {"input": 5, "kept": 4}
    assert read_grid(out / "s2_t0_B0.ntg").shape == (32, 32)
    manifest = json.loads((out / "s1_composite.json").read_text())
    assert manifest["band_names"] == ["VV_a", "VH_a", "VV_d", "VH_d", "incidence"]

    cfg = write_json(tmp_path / "m.json", {"model-forward": {
        "s1": str(out / "s1_composite.json"), "s2": str(out / "s2_composite.json"), "model": SMALL_MODEL}})
    res = [tmp_path / f"f{t}" for t in (1, 2)]
    for t, r in zip((1, 2), res):
        code, err = main(capsys, "model-forward", "--config", cfg, "--seed", "3", "--threads", str(t), "--out", str(r))
        assert code == 0, err
    doc = json.loads((res[0] / "logits.json").read_text())
    assert len(doc["classes"]) == 8
    for name in doc["classes"]:
        assert (res[0] / name).read_bytes() == (res[1] / name).read_bytes()

    members = [[str(res[0] / n) for n in doc["classes"]]]
    code, err = main(capsys, "sample", "--config", str(scene / "config.json"), "--seed", "1",
                     "--out", str(tmp_path / "s"))
    assert code == 0, err
    pts = list(csv.DictReader(open(tmp_path / "s" / "samples.csv")))
    rows = [{**p, "ref_class": "tree_crop" if i % 3 == 0 else "non_tree_crop"} for i, p in enumerate(pts)]
    with open(tmp_path / "labelled.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(pts[0]))
        w.writeheader()
        w.writerows(rows)
    cal = write_json(tmp_path / "cal.json", {"calibrate": {"members": members, "points": str(tmp_path / "labelled.csv")}})
    code, err = main(capsys, "calibrate", "--config", cal, "--out", str(tmp_path / "c"))
    assert code == 0, err
    assert (tmp_path / "c" / "reliability.csv").read_text().startswith("bin_lo,bin_hi")
    assert read_grid(tmp_path / "c" / "entropy.ntg").values.dtype == np.float32


def test_sample_same_seed_same_bytes(scene, tmp_path, capsys):
    outs = []
    for k in range(2):
        out = tmp_path / f"s{k}"
        assert main(capsys, "sample", "--config", str(scene / "config.json"), "--seed", "5", "--out", str(out))[0] == 0
        outs.append(out)
    for name in ("samples.csv", "strata.csv", "buffer.ntg", "sample_summary.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rows = list(csv.DictReader(open(outs[0] / "samples.csv")))
    assert len(rows) == 50
    assert sum(r["stratum_id"] == "buffer" for r in rows) == 10


def test_split(scene, tmp_path, capsys):
    main(capsys, "sample", "--config", str(scene / "config.json"), "--out", str(tmp_path / "s"))
    cfg = write_json(tmp_path / "c.json", {"split": {"points": str(tmp_path / "s" / "samples.csv"), "cell_km": 0.5}})
    code, err = main(capsys, "split", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "o"))
    assert code == 0, err
    counts = json.loads((tmp_path / "o" / "split_summary.json").read_text())
    assert sum(counts.values()) == 50


def test_analytics_subcommands(scene, tmp_path, capsys):
    cfg = str(scene / "config.json")
    for sub in ("loss-overlap", "pa-profile", "hex", "agree"):
        code, err = main(capsys, sub, "--config", cfg, "--threads", "2", "--format", "ntg1", "--out", str(tmp_path / sub))
        assert code == 0, (sub, err)
    rows = list(csv.DictReader(open(tmp_path / "hex" / "hex.csv")))
    assert sum(int(r["total_pixels"]) for r in rows) == 32 * 32
    assert sum(int(r["tc_pixels"]) for r in rows) == 140
    ag = json.loads((tmp_path / "agree" / "agreement.json").read_text())
    assert sum(ag["pixels"].values()) == 1024
    assert (tmp_path / "pa-profile" / "signed_distance.ntg").exists()
    prof = list(csv.DictReader(open(tmp_path / "pa-profile" / "pa_profile.csv")))
    assert len(prof) == 6
    lo = json.loads((tmp_path / "loss-overlap" / "loss_overlap.json").read_text())
    assert lo["total_tc_ha"] == pytest.approx(140.0)


def test_calibrate_scores_mode(tmp_path, capsys):
    (tmp_path / "s.csv").write_text("confidence,correct\n0.6,1\n0.6,0\n0.9,1\n0.9,1\n")
    cfg = write_json(tmp_path / "c.json", {"calibrate": {"scores": str(tmp_path / "s.csv"), "bins": 4}})
    assert main(capsys, "calibrate", "--config", cfg, "--out", str(tmp_path / "o"))[0] == 0
    doc = json.loads((tmp_path / "o" / "calibration.json").read_text())
    assert doc["ece"] == pytest.approx(0.1)


def test_run_api_returns_bytes(reference_config):
    user = cli.load_config(reference_config, "assess")
    a = cli.run("assess", user)
    b = cli.run("assess", user)
    assert a == b and set(a) == {"assessment.json"}
