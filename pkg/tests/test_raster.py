import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treecrop.raster import (
    DTYPES,
    DtypeError,
    FormatError,
    Grid,
    GridTransform,
    HeaderError,
    RegionMask,
    TransformMismatch,
    TruncatedError,
    check_aligned,
    decode_grid,
    encode_grid,
    map_tiles,
    pairwise_sum,
    read_grid,
    resample_nearest,
    tiles,
    write_grid,
)


def test_roundtrip_zeros(tmp_path, transform):
    g = Grid(np.zeros((3, 3), np.float32), transform)
    write_grid(g, tmp_path / "z.ntg")
    assert read_grid(tmp_path / "z.ntg").equals(g)


def test_wrong_magic(tmp_path, transform):
    data = bytearray(encode_grid(Grid(np.zeros((2, 2), np.uint8), transform)))
    data[:4] = b"XXXX"
    (tmp_path / "bad.ntg").write_bytes(bytes(data))
    with pytest.raises(FormatError):
        read_grid(tmp_path / "bad.ntg")


def test_random_u8_roundtrip(tmp_path, transform, rng):
    vals = rng.integers(0, 256, size=(256, 256)).astype(np.uint8)
    g = Grid(vals, transform)
    write_grid(g, tmp_path / "r.ntg")
    back = read_grid(tmp_path / "r.ntg")
    assert back.values.tobytes() == vals.tobytes()
    assert back.equals(g)


def test_empty_mask_written(tmp_path, transform):
    g = Grid(np.ones((2, 3), np.uint16), transform, np.zeros((2, 3), bool))
    raw = encode_grid(g)
    assert raw[-6:] == b"\x00" * 6
    assert not decode_grid(raw).valid_mask.any()


def test_writes_are_deterministic(tmp_path, transform, rng):
    g = Grid(rng.random((5, 7)).astype(np.float32), transform, rng.random((5, 7)) > 0.5)
    write_grid(g, tmp_path / "a.ntg")
    write_grid(g, tmp_path / "b.ntg")
    assert (tmp_path / "a.ntg").read_bytes() == (tmp_path / "b.ntg").read_bytes()


@pytest.mark.parametrize("name", sorted(DTYPES))
def test_header_dtype_field(name, transform):
    g = Grid(np.zeros((1, 1), DTYPES[name]), transform)
    raw = encode_grid(g)
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen])
    assert header["dtype"] == name
    assert len(raw) == 8 + hlen + DTYPES[name].itemsize


def test_layout_is_exact(transform):
    g = Grid(np.array([[1, 2]], np.int32), transform, np.array([[True, False]]))
    raw = encode_grid(g)
    (hlen,) = struct.unpack("<I", raw[4:8])
    assert raw[:4] == b"NTG1"
    assert raw[8 + hlen :] == struct.pack("<ii", 1, 2) + b"\x01\x00"


def test_distinct_errors(transform):
    raw = encode_grid(Grid(np.zeros((4, 4), np.float32), transform, np.ones((4, 4), bool)))
    with pytest.raises(TruncatedError):
        decode_grid(raw[:-3])
    with pytest.raises(DtypeError):
        decode_grid(raw + b"\x00")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen])
    header["dtype"] = "f64"
    head = json.dumps(header).encode()
    with pytest.raises(DtypeError):
        decode_grid(b"NTG1" + struct.pack("<I", len(head)) + head + raw[8 + hlen :])
    bad = b"{not json"
    with pytest.raises(HeaderError):
        decode_grid(b"NTG1" + struct.pack("<I", len(bad)) + bad)
    del header["crs_label"]
    header["dtype"] = "f32"
    head = json.dumps(header).encode()
    with pytest.raises(HeaderError):
        decode_grid(b"NTG1" + struct.pack("<I", len(head)) + head + raw[8 + hlen :])


masks = st.integers(1, 12).flatmap(
    lambda h: st.integers(1, 12).flatmap(
        lambda w: st.tuples(
            st.sampled_from(sorted(DTYPES)),
            st.lists(st.booleans(), min_size=h * w, max_size=h * w),
            st.just((h, w)),
            st.integers(0, 2**31 - 1),
        )
    )
)


@settings(max_examples=60, deadline=None)
@given(masks)
def test_roundtrip_property(case):
    name, mask, shape, seed = case
    rng = np.random.default_rng(seed)
    raw = rng.integers(0, 256, size=shape[0] * shape[1] * DTYPES[name].itemsize, dtype=np.uint8)
    vals = raw.view(DTYPES[name]).reshape(shape)
    g = Grid(vals, GridTransform(-3.5, 7.25, 0.1, "x"), np.array(mask).reshape(shape))
    back = decode_grid(encode_grid(g))
    assert back.values.tobytes() == g.values.tobytes()
    assert np.array_equal(back.valid_mask, g.valid_mask)
    assert back.transform == g.transform


def test_resample_constant(transform):
    g = Grid(np.full((3, 4), 7, np.uint8), transform)
    out = resample_nearest(g, 2)
    assert out.shape == (6, 8) and (out.values == 7).all()
    assert out.transform.pixel_size == 5.0


def test_resample_blocks(transform):
    g = Grid(np.array([[1, 2], [3, 4]], np.uint8), transform)
    expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    assert np.array_equal(resample_nearest(g, 2).values, expected)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 1000))
def test_resample_properties(a, b, seed):
    rng = np.random.default_rng(seed)
    g = Grid(rng.integers(0, 100, (3, 5)).astype(np.int32), GridTransform(0, 0, 12.0),
             rng.random((3, 5)) > 0.3)
    up = resample_nearest(g, a)
    assert np.array_equal(up.values[::a, ::a], g.values)
    assert np.array_equal(up.valid_mask[::a, ::a], g.valid_mask)
    assert resample_nearest(g, a * b).equals(resample_nearest(up, b))


def test_resample_centres_coincide(transform):
    g = Grid(np.arange(6, dtype=np.int32).reshape(2, 3), transform)
    up = resample_nearest(g, 3)
    r, c = np.indices(up.shape)
    x, y = up.transform.pixel_to_world(r, c)
    sr, sc = g.transform.world_to_pixel(x, y)
    assert np.array_equal(up.values, g.values[sr, sc])


def test_transform_roundtrip(rng):
    t = GridTransform(123456.0, 8765432.0, 10.0)
    rows = rng.integers(0, 100000, 500)
    cols = rng.integers(0, 100000, 500)
    x, y = t.pixel_to_world(rows, cols)
    r2, c2 = t.world_to_pixel(x, y)
    assert np.array_equal(rows, r2) and np.array_equal(cols, c2)
    x2, y2 = t.pixel_to_world(r2, c2)
    assert np.array_equal(x, x2) and np.array_equal(y, y2)


def test_transform_rejects_bad_pixel():
    with pytest.raises(ValueError):
        GridTransform(0, 0, 0.0)


def test_tiles_counts():
    assert len(list(tiles((128, 128), 64))) == 4
    ws = list(tiles((100, 100), 64))
    assert len(ws) == 4
    assert sorted({(w.height, w.width) for w in ws}) == [(36, 36), (36, 64), (64, 36), (64, 64)]
    assert [(w.row, w.col) for w in ws] == [(0, 0), (0, 64), (64, 0), (64, 64)]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 80), st.integers(1, 80), st.integers(1, 30))
def test_tiles_partition(h, w, t):
    cover = np.zeros((h, w), int)
    total = 0
    for win in tiles((h, w), t):
        cover[win.slices] += 1
        total += win.size
    assert total == h * w
    assert (cover == 1).all()


def test_map_tiles_order_independent_of_threads(rng):
    arr = rng.random((300, 257))
    sums1 = map_tiles(lambda w: arr[w.slices].sum(), arr.shape, 64, threads=1)
    sums4 = map_tiles(lambda w: arr[w.slices].sum(), arr.shape, 64, threads=4)
    assert sums1 == sums4
    assert pairwise_sum(sums1) == pairwise_sum(sums4)
    assert pairwise_sum(sums1) == pytest.approx(arr.sum(), rel=1e-12)


def test_region_mask_checks(transform):
    with pytest.raises(ValueError):
        RegionMask(Grid(np.full((2, 2), 2, np.uint8), transform))
    a = RegionMask.from_bool(np.ones((2, 2)), transform)
    b = RegionMask.from_bool(np.ones((2, 2)), GridTransform(0, 0, 10.0))
    with pytest.raises(TransformMismatch):
        check_aligned(a, b)


def test_grid_is_immutable(transform):
    g = Grid(np.zeros((2, 2), np.uint8), transform)
    with pytest.raises(ValueError):
        g.values[0, 0] = 1
