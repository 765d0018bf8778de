"""Seasonal compositing of Sentinel-style observation stacks.

Optical stacks are cloud-screened and reduced with a per-pixel median; radar
stacks skip the screening and use the mean. Composites are then normalized per
channel with median/MAD statistics taken from training pixels.
"""

from __future__ import annotations

import datetime as dt
import json
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .raster import Grid, GridTransform, check_aligned, read_grid

DEFAULT_MAX_CLOUD = 0.40
DEFAULT_MAD_FLOOR = 1e-6

S1_BAND_ORDER = ("VV_a", "VH_a", "VV_d", "VH_d", "incidence")


@dataclass(frozen=True)
class Observation:
    date: dt.date
    bands: tuple[Grid, ...]
    cloud_mask: np.ndarray | None = None  # True = contaminated

    def contaminated(self) -> np.ndarray:
        if self.cloud_mask is None:
            return np.zeros(self.bands[0].shape, dtype=bool)
        return np.asarray(self.cloud_mask, dtype=bool)

    def valid_extent(self) -> np.ndarray:
        valid = self.bands[0].valid_mask.copy()
        for band in self.bands[1:]:
            valid &= band.valid_mask
        return valid

    def usable(self) -> np.ndarray:
        return self.valid_extent() & ~self.contaminated()


@dataclass(frozen=True)
class ObservationStack:
    observations: tuple[Observation, ...]
    modality: str  # "optical" or "radar"
    band_names: tuple[str, ...]

    def __post_init__(self):
        obs = tuple(self.observations)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "band_names", tuple(self.band_names))
        if self.modality not in ("optical", "radar"):
            raise ValueError(f"unknown modality {self.modality!r}")
        for a, b in zip(obs, obs[1:]):
            if not b.date > a.date:
                raise ValueError("observation dates must be strictly increasing")
        for o in obs:
            if len(o.bands) != len(self.band_names):
                raise ValueError(
                    f"{o.date}: {len(o.bands)} bands, expected {len(self.band_names)}"
                )
        grids = [band for o in obs for band in o.bands]
        if grids:
            check_aligned(*grids)
            for o in obs:
                if o.cloud_mask is not None and np.shape(o.cloud_mask) != grids[0].shape:
                    raise ValueError(f"{o.date}: cloud mask shape mismatch")

    def __len__(self):
        return len(self.observations)

    @property
    def n_bands(self) -> int:
        return len(self.band_names)


@dataclass(frozen=True)
class SeasonalComposite:
    """Four seasonal images.

    ``data`` has shape ``(seasons, bands, height, width)`` in float64 and
    ``fill`` is a ``(seasons, height, width)`` flag array marking pixels with
    no usable observation in the window.
    """

    data: np.ndarray
    fill: np.ndarray
    windows: tuple[tuple[dt.date, dt.date], ...]
    reducer: str
    band_names: tuple[str, ...]
    transform: GridTransform | None = None

    def to_model_input(self) -> np.ndarray:
        """``(T, H, W, C)`` float32 array as consumed by the model."""
        return np.ascontiguousarray(np.transpose(self.data, (0, 2, 3, 1)), dtype=np.float32)

    def season_grids(self, season: int) -> list[Grid]:
        t = self.transform or GridTransform(0.0, 0.0, 10.0)
        return [
            Grid(self.data[season, b].astype(np.float32), t, ~self.fill[season])
            for b in range(self.data.shape[1])
        ]


@dataclass(frozen=True)
class ChannelStats:
    median: np.ndarray
    mad: np.ndarray
    epsilon_floor: float = DEFAULT_MAD_FLOOR
    floored: np.ndarray = field(default=None)


def quarter_windows(year: int) -> tuple[tuple[dt.date, dt.date], ...]:
    """Calendar quarters, inclusive on both ends."""
    return (
        (dt.date(year, 1, 1), dt.date(year, 3, 31)),
        (dt.date(year, 4, 1), dt.date(year, 6, 30)),
        (dt.date(year, 7, 1), dt.date(year, 9, 30)),
        (dt.date(year, 10, 1), dt.date(year, 12, 31)),
    )


def check_windows(windows) -> None:
    """Windows must be four contiguous inclusive ranges spanning one year."""
    if len(windows) != 4:
        raise ValueError("exactly 4 season windows are required")
    for lo, hi in windows:
        if hi < lo:
            raise ValueError(f"empty window {lo}..{hi}")
    for (_, prev_hi), (lo, _) in zip(windows, windows[1:]):
        if lo != prev_hi + dt.timedelta(days=1):
            raise ValueError("season windows must be contiguous and non-overlapping")
    start, end = windows[0][0], windows[-1][1]
    if end != _add_year(start) - dt.timedelta(days=1):
        raise ValueError("season windows must cover exactly one year")


def _add_year(d: dt.date) -> dt.date:
    try:
        return d.replace(year=d.year + 1)
    except ValueError:  # 29 Feb
        return d.replace(year=d.year + 1, day=28)


def cloud_fraction(obs: Observation) -> float:
    valid = obs.valid_extent()
    n = int(valid.sum())
    if n == 0:
        return 1.0
    return float((obs.contaminated() & valid).sum()) / n


def cloud_filter(stack: ObservationStack, max_cloud_fraction: float = DEFAULT_MAX_CLOUD) -> ObservationStack:
    """Drop observations whose contaminated share of the valid extent exceeds the threshold."""
    if not 0.0 <= max_cloud_fraction <= 1.0:
        raise ValueError("max_cloud_fraction must be in [0, 1]")
    kept = tuple(o for o in stack.observations if cloud_fraction(o) <= max_cloud_fraction)
    return replace(stack, observations=kept)


def seasonal_composite(stack: ObservationStack, reducer: str | None = None, windows=None) -> SeasonalComposite:
    """Reduce each season window to one image per band.

    Args:
        stack: observations, already cloud-screened if desired.
        reducer: ``"median"`` or ``"mean"``; defaults to median for optical
            and mean for radar stacks.
        windows: four ``(start, end)`` inclusive date ranges. Defaults to the
            calendar quarters of the first observation's year.
    """
    if reducer is None:
        reducer = "median" if stack.modality == "optical" else "mean"
    if reducer not in ("median", "mean"):
        raise ValueError(f"unknown reducer {reducer!r}")
    if windows is None:
        if not stack.observations:
            raise ValueError("windows are required for an empty stack")
        windows = quarter_windows(stack.observations[0].date.year)
    windows = tuple((lo, hi) for lo, hi in windows)
    check_windows(windows)
    if not stack.observations:
        raise ValueError("cannot infer raster shape from an empty stack")

    first = stack.observations[0].bands[0]
    height, width = first.shape
    nb = stack.n_bands
    data = np.zeros((4, nb, height, width), dtype=np.float64)
    fill = np.ones((4, height, width), dtype=bool)
    for s, (lo, hi) in enumerate(windows):
        members = [o for o in stack.observations if lo <= o.date <= hi]
        if not members:
            continue
        cube = np.stack(
            [np.stack([b.values for b in o.bands]).astype(np.float64) for o in members]
        )  # (n, bands, H, W)
        usable = np.stack([o.usable() for o in members])  # (n, H, W)
        cube[~np.broadcast_to(usable[:, None], cube.shape)] = np.nan
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if reducer == "median":
                red = np.nanmedian(cube, axis=0)
            else:
                red = np.nanmean(cube, axis=0)
        has_obs = usable.any(axis=0)
        data[s] = np.where(has_obs[None], red, 0.0)
        fill[s] = ~has_obs
    return SeasonalComposite(data, fill, windows, reducer, stack.band_names, first.transform)


def stack_radar_channels(asc: ObservationStack, desc: ObservationStack, incidence: Grid) -> ObservationStack:
    """Concatenate ascending and descending VV/VH with the incidence angle.

    Observations are paired by position; the output band order is
    ``VV_a, VH_a, VV_d, VH_d, incidence`` and each output observation takes the
    ascending acquisition date.
    """
    if asc is None or desc is None or not len(desc):
        raise ValueError("both ascending and descending passes are required")
    if len(asc) != len(desc):
        raise ValueError("ascending and descending stacks differ in length")
    if asc.n_bands != 2 or desc.n_bands != 2:
        raise ValueError("each pass must carry exactly VV and VH")
    grids = [b for o in asc.observations + desc.observations for b in o.bands]
    check_aligned(incidence, *grids)
    out = []
    for a, d in zip(asc.observations, desc.observations):
        cloud = None
        if a.cloud_mask is not None or d.cloud_mask is not None:
            cloud = a.contaminated() | d.contaminated()
        out.append(Observation(a.date, tuple(a.bands) + tuple(d.bands) + (incidence,), cloud))
    return ObservationStack(tuple(out), "radar", S1_BAND_ORDER)


def _valid_values(samples, channel: int) -> np.ndarray:
    vals = []
    for sample in samples:
        if isinstance(sample, SeasonalComposite):
            v = sample.data[:, channel]
            vals.append(v[~sample.fill])
        else:
            grid = sample[channel]
            vals.append(grid.values[grid.valid_mask].astype(np.float64))
    return np.concatenate(vals) if vals else np.empty(0)


def robust_stats(samples: Sequence, epsilon_floor: float = DEFAULT_MAD_FLOOR) -> ChannelStats:
    """Per-channel median and median absolute deviation over valid pixels.

    ``samples`` is a sequence of either :class:`SeasonalComposite` objects or
    lists of per-channel :class:`Grid` objects.
    """
    if not samples:
        raise ValueError("no samples")
    first = samples[0]
    nc = first.data.shape[1] if isinstance(first, SeasonalComposite) else len(first)
    med = np.empty(nc)
    mad = np.empty(nc)
    for c in range(nc):
        v = _valid_values(samples, c)
        if v.size == 0:
            raise ValueError(f"channel {c} has no valid pixels")
        med[c] = np.median(v)
        mad[c] = np.median(np.abs(v - med[c]))
    floored = mad < epsilon_floor
    return ChannelStats(med, np.where(floored, epsilon_floor, mad), epsilon_floor, floored)


def normalize(composite: SeasonalComposite, stats: ChannelStats) -> SeasonalComposite:
    """Centre by the channel median and scale by MAD; fill pixels become 0."""
    if composite.data.shape[1] != stats.median.size:
        raise ValueError("channel count mismatch between composite and stats")
    med = stats.median[None, :, None, None]
    mad = stats.mad[None, :, None, None]
    data = (composite.data - med) / mad
    data = np.where(composite.fill[:, None], 0.0, data)
    return replace(composite, data=data)


def denormalize(composite: SeasonalComposite, stats: ChannelStats) -> SeasonalComposite:
    med = stats.median[None, :, None, None]
    mad = stats.mad[None, :, None, None]
    return replace(composite, data=composite.data * mad + med)


def load_stack(manifest_path) -> ObservationStack:
    """Read an observation stack manifest.

    The manifest is JSON::

        {"modality": "optical", "band_names": ["B2", ...],
         "observations": [{"date": "2020-01-05", "bands": ["b2.ntg", ...],
                           "cloud_mask": "cloud.ntg"}, ...]}

    Paths are relative to the manifest. Cloud masks are u8 NTG1 grids where 1
    marks contamination.
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    unknown = set(doc) - {"modality", "band_names", "observations"}
    if unknown:
        raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
    band_names = tuple(doc["band_names"])
    obs = []
    for entry in doc["observations"]:
        paths = entry["bands"]
        if len(paths) != len(band_names):
            raise ValueError(f"{entry['date']}: band list does not match band_names")
        bands = tuple(read_grid(os.path.join(base, p)) for p in paths)
        cloud = None
        if entry.get("cloud_mask"):
            cloud = read_grid(os.path.join(base, entry["cloud_mask"])).values == 1
        obs.append(Observation(dt.date.fromisoformat(entry["date"]), bands, cloud))
    return ObservationStack(tuple(obs), doc["modality"], band_names)
