"""Georeferenced raster grids, tiling and the NTG1 file format.

A :class:`Grid` is a north-up, square-pixel raster with a per-pixel validity
mask. Values are stored as a 2-D ``(height, width)`` numpy array whose dtype is
one of ``u8``, ``u16``, ``i32`` or ``f32``. Grids are treated as immutable:
their arrays are flagged read-only on construction.

NTG1 layout (little-endian, no padding)::

    b"NTG1" | u32 header length L | L bytes of UTF-8 JSON | payload | [mask]
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

MAGIC = b"NTG1"

DTYPES = {
    "u8": np.dtype("<u1"),
    "u16": np.dtype("<u2"),
    "i32": np.dtype("<i4"),
    "f32": np.dtype("<f4"),
}

_HEADER_FIELDS = (
    "width",
    "height",
    "dtype",
    "origin_x",
    "origin_y",
    "pixel_size",
    "crs_label",
    "has_mask",
)


class RasterError(Exception):
    """Base class for raster errors."""


class FormatError(RasterError):
    """File does not start with the NTG1 magic or has an unreadable header."""


class HeaderError(RasterError):
    """Header JSON is malformed or has missing/invalid fields."""


class DtypeError(RasterError):
    """Unknown dtype, or array dtype inconsistent with the declared one."""


class TruncatedError(RasterError):
    """Payload or mask plane shorter than the header promises."""


class TransformMismatch(RasterError):
    """Grids that must be co-registered are not."""


def dtype_name(dtype) -> str:
    dt = np.dtype(dtype).newbyteorder("<")
    for name, candidate in DTYPES.items():
        if candidate == dt:
            return name
    raise DtypeError(f"unsupported dtype {np.dtype(dtype)}")


@dataclass(frozen=True)
class GridTransform:
    """North-up affine transform with square pixels.

    ``origin_x``/``origin_y`` are the projected coordinates of the outer corner
    of pixel (0, 0); rows increase southwards.
    """

    origin_x: float
    origin_y: float
    pixel_size: float
    crs_label: str = "EPSG:equal-area"

    def __post_init__(self):
        if not (self.pixel_size > 0 and math.isfinite(self.pixel_size)):
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def pixel_area(self) -> float:
        return self.pixel_size * self.pixel_size

    def pixel_to_world(self, row, col):
        """Projected coordinates of pixel centres."""
        x = self.origin_x + (np.asarray(col) + 0.5) * self.pixel_size
        y = self.origin_y - (np.asarray(row) + 0.5) * self.pixel_size
        return x, y

    def world_to_pixel(self, x, y):
        """Integer (row, col) of the pixel containing each point."""
        col = np.floor((np.asarray(x) - self.origin_x) / self.pixel_size)
        row = np.floor((self.origin_y - np.asarray(y)) / self.pixel_size)
        return row.astype(np.int64), col.astype(np.int64)

    def scaled(self, factor: int) -> "GridTransform":
        return GridTransform(
            self.origin_x, self.origin_y, self.pixel_size / factor, self.crs_label
        )


@dataclass(frozen=True, eq=False)
class Grid:
    """A typed raster with a validity mask.

    Args:
        values: ``(height, width)`` array; cast to the little-endian form of
            its dtype.
        transform: pixel geometry.
        valid_mask: boolean array of the same shape, ``None`` meaning all valid.
        has_mask: whether the mask plane is written to disk. Defaults to True
            when an explicit mask was given.
    """

    values: np.ndarray
    transform: GridTransform
    valid_mask: np.ndarray | None = None
    has_mask: bool | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"grid values must be 2-D, got shape {values.shape}")
        name = dtype_name(values.dtype)
        values = np.ascontiguousarray(values, dtype=DTYPES[name])
        values.flags.writeable = False
        explicit = self.valid_mask is not None
        if explicit:
            mask = np.ascontiguousarray(self.valid_mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValueError("valid_mask shape does not match values")
        else:
            mask = np.ones(values.shape, dtype=bool)
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid_mask", mask)
        if self.has_mask is None:
            object.__setattr__(self, "has_mask", explicit)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def dtype(self) -> str:
        return dtype_name(self.values.dtype)

    def with_values(self, values, valid_mask=None) -> "Grid":
        mask = self.valid_mask if valid_mask is None else valid_mask
        return Grid(values, self.transform, mask, has_mask=self.has_mask or valid_mask is not None)

    def window(self, win: "Window") -> "Grid":
        """Sub-grid for a window, with the transform shifted accordingly."""
        t = self.transform
        sub_t = GridTransform(
            t.origin_x + win.col * t.pixel_size,
            t.origin_y - win.row * t.pixel_size,
            t.pixel_size,
            t.crs_label,
        )
        return Grid(
            self.values[win.slices], sub_t, self.valid_mask[win.slices], self.has_mask
        )

    def equals(self, other: "Grid") -> bool:
        """Bitwise equality of values, mask and geometry."""
        return (
            self.transform == other.transform
            and self.dtype == other.dtype
            and self.has_mask == other.has_mask
            and self.values.tobytes() == other.values.tobytes()
            and np.array_equal(self.valid_mask, other.valid_mask)
        )


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Binary membership raster (1 = inside), e.g. a country or a map class."""

    grid: Grid
    region_id: str = ""

    def __post_init__(self):
        if self.grid.dtype != "u8":
            raise DtypeError("region masks must be u8 grids")
        vals = self.grid.values
        if vals.size and vals.max(initial=0) > 1:
            raise ValueError("region mask values must be 0 or 1")

    @classmethod
    def from_bool(cls, inside, transform: GridTransform, region_id: str = "", valid=None):
        inside = np.asarray(inside, dtype=bool)
        return cls(Grid(inside.astype(np.uint8), transform, valid), region_id)

    @property
    def transform(self) -> GridTransform:
        return self.grid.transform

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def inside(self) -> np.ndarray:
        """Boolean membership, false wherever the grid is invalid."""
        return (self.grid.values == 1) & self.grid.valid_mask

    @property
    def valid(self) -> np.ndarray:
        return self.grid.valid_mask


def check_aligned(*items) -> GridTransform:
    """Raise :class:`TransformMismatch` unless all grids/masks share geometry."""
    first = items[0]
    for other in items[1:]:
        if other.transform != first.transform or other.shape != first.shape:
            raise TransformMismatch(
                f"grids not co-registered: {first.transform}/{first.shape} vs "
                f"{other.transform}/{other.shape}"
            )
    return first.transform


# --------------------------------------------------------------------------
# NTG1 I/O


def encode_grid(grid: Grid) -> bytes:
    header = {
        "width": grid.width,
        "height": grid.height,
        "dtype": grid.dtype,
        "origin_x": float(grid.transform.origin_x),
        "origin_y": float(grid.transform.origin_y),
        "pixel_size": float(grid.transform.pixel_size),
        "crs_label": grid.transform.crs_label,
        "has_mask": bool(grid.has_mask),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(head)), head, grid.values.tobytes()]
    if grid.has_mask:
        parts.append(grid.valid_mask.astype(np.uint8).tobytes())
    return b"".join(parts)


def decode_grid(data: bytes) -> Grid:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("missing NTG1 magic")
    (hlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + hlen:
        raise TruncatedError("header shorter than declared length")
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"unreadable header: {exc}") from None
    if not isinstance(header, dict) or set(header) != set(_HEADER_FIELDS):
        raise HeaderError(f"header fields must be exactly {sorted(_HEADER_FIELDS)}")
    width, height = header["width"], header["height"]
    if not all(isinstance(v, int) and v >= 0 for v in (width, height)):
        raise HeaderError("width/height must be non-negative integers")
    if header["dtype"] not in DTYPES:
        raise DtypeError(f"unknown dtype {header['dtype']!r}")
    dt = DTYPES[header["dtype"]]
    npix = width * height
    start = 8 + hlen
    end = start + npix * dt.itemsize
    mask_end = end + (npix if header["has_mask"] else 0)
    if len(data) < mask_end:
        raise TruncatedError(f"expected {mask_end} bytes, file has {len(data)}")
    if len(data) > mask_end:
        raise DtypeError("payload larger than width*height*dtype size")
    values = np.frombuffer(data, dtype=dt, count=npix, offset=start).reshape(height, width)
    mask = None
    if header["has_mask"]:
        raw = np.frombuffer(data, dtype=np.uint8, count=npix, offset=end)
        if raw.size and raw.max() > 1:
            raise HeaderError("mask plane must contain only 0/1 bytes")
        mask = raw.reshape(height, width).astype(bool)
    try:
        transform = GridTransform(
            header["origin_x"], header["origin_y"], header["pixel_size"], header["crs_label"]
        )
    except (TypeError, ValueError) as exc:
        raise HeaderError(str(exc)) from None
    return Grid(values.copy(), transform, mask, has_mask=bool(header["has_mask"]))


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_grid(grid: Grid, path) -> None:
    atomic_write_bytes(path, encode_grid(grid))


def read_grid(path) -> Grid:
    with open(path, "rb") as fh:
        return decode_grid(fh.read())


# --------------------------------------------------------------------------
# resampling and tiling


def resample_nearest(grid: Grid, factor: int) -> Grid:
    """Upsample by an integer factor, each source pixel becoming a block."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    block = np.ones((factor, factor), dtype=np.uint8)
    values = np.kron(grid.values, block).astype(grid.values.dtype)
    mask = np.kron(grid.valid_mask, block).astype(bool)
    return Grid(values, grid.transform.scaled(factor), mask, grid.has_mask)


@dataclass(frozen=True)
class Window:
    row: int
    col: int
    height: int
    width: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return (slice(self.row, self.row + self.height), slice(self.col, self.col + self.width))

    @property
    def size(self) -> int:
        return self.height * self.width


def tiles(grid_or_shape, tile_size: int) -> Iterator[Window]:
    """Row-major windows covering the grid; edge tiles may be smaller."""
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    shape = grid_or_shape.shape if hasattr(grid_or_shape, "shape") else grid_or_shape
    height, width = shape[0], shape[1]
    for r in range(0, height, tile_size):
        for c in range(0, width, tile_size):
            yield Window(r, c, min(tile_size, height - r), min(tile_size, width - c))


def map_tiles(
    func: Callable[[Window], object],
    shape: Sequence[int],
    tile_size: int,
    threads: int = 1,
) -> list:
    """Apply ``func`` to every tile and return results in row-major tile order.

    Results are always ordered by tile position, so any reduction the caller
    performs over them is independent of ``threads``.
    """
    windows = list(tiles(tuple(shape), tile_size))
    if threads <= 1 or len(windows) < 2:
        return [func(w) for w in windows]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, windows))


def pairwise_sum(values: Sequence[float]) -> float:
    """Fixed-shape pairwise summation; result depends only on value order."""
    vals = [float(v) for v in values]
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]
