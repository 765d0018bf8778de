"""Ensemble fusion, entropy uncertainty and expected calibration error."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .raster import Grid, GridTransform, RegionMask, atomic_write_bytes

DEFAULT_BINS = 12


@dataclass(frozen=True)
class ProbabilityField:
    """Per-pixel class scores, ``probs`` shaped ``(K, H, W)``."""

    probs: np.ndarray
    class_labels: tuple[str, ...]
    transform: GridTransform | None = None
    valid: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 3 or probs.shape[0] != len(self.class_labels):
            raise ValueError("probs must be (K, H, W) with one label per class")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        valid = np.ones(probs.shape[1:], dtype=bool) if self.valid is None else np.asarray(self.valid, bool)
        object.__setattr__(self, "valid", valid)

    @property
    def K(self) -> int:
        return self.probs.shape[0]

    def argmax(self) -> np.ndarray:
        return np.argmax(self.probs, axis=0)

    def _transform(self) -> GridTransform:
        return self.transform or GridTransform(0.0, 0.0, 10.0)


def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def ensemble_fuse(
    logit_fields: Sequence[np.ndarray],
    class_labels: Sequence[str] | None = None,
    transform: GridTransform | None = None,
    valid: np.ndarray | None = None,
) -> ProbabilityField:
    """Average member logits (each ``(K, H, W)``) and apply a softmax."""
    if not logit_fields:
        raise ValueError("at least one ensemble member is required")
    members = [np.asarray(f, dtype=np.float64) for f in logit_fields]
    shape = members[0].shape
    if any(m.shape != shape for m in members):
        raise ValueError("ensemble members differ in shape")
    mean = np.sum(members, axis=0) / len(members)
    labels = tuple(class_labels) if class_labels is not None else tuple(str(k) for k in range(shape[0]))
    return ProbabilityField(softmax(mean, axis=0), labels, transform, valid)


def normalized_entropy(probs: np.ndarray, axis: int = 0) -> np.ndarray:
    """``-sum p ln p / ln K`` with ``0 ln 0 = 0``."""
    p = np.asarray(probs, dtype=np.float64)
    K = p.shape[axis]
    if K < 2:
        return np.zeros(np.delete(p.shape, axis))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=axis) / math.log(K)


def entropy_map(p: ProbabilityField) -> Grid:
    h = normalized_entropy(p.probs, axis=0)
    return Grid(h.astype(np.float32), p._transform(), p.valid, has_mask=True)


def confidence(p: ProbabilityField) -> np.ndarray:
    """Confidence as one minus normalized entropy."""
    return 1.0 - normalized_entropy(p.probs, axis=0)


@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    count: int
    mean_conf: float
    accuracy: float


@dataclass(frozen=True)
class ReliabilityTable:
    bins: list[ReliabilityBin]
    ece: float
    n: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bin_lo,bin_hi,count,mean_conf,accuracy\n")
        for b in self.bins:
            buf.write(f"{b.lo!r},{b.hi!r},{b.count},{b.mean_conf!r},{b.accuracy!r}\n")
        buf.write(f"# ece={self.ece!r} n={self.n}\n")
        return buf.getvalue()

    def write(self, path) -> None:
        atomic_write_bytes(path, self.to_csv().encode("utf-8"))


def ece(confidence, correct, bins: int = DEFAULT_BINS, value_range=(0.0, 1.0)) -> ReliabilityTable:
    """Expected calibration error over equal-width bins.

    Bins are left-closed/right-open except the last, which is closed. Empty
    bins contribute nothing. ``value_range`` defaults to [0, 1].
    """
    conf = np.asarray(confidence, dtype=np.float64).ravel()
    ok = np.asarray(correct, dtype=bool).ravel()
    if conf.shape != ok.shape:
        raise ValueError("confidence and correct differ in length")
    n = conf.size
    if n == 0:
        raise ValueError("no samples")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = value_range
    if conf.min() < lo or conf.max() > hi:
        raise ValueError(f"confidences must lie in [{lo}, {hi}]")
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, bins - 1)
    count = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    ok_sum = np.bincount(idx, weights=ok.astype(np.float64), minlength=bins)
    table = []
    total = 0.0
    for m in range(bins):
        c = int(count[m])
        if c:
            mc = conf_sum[m] / c
            acc = ok_sum[m] / c
            total += c / n * abs(acc - mc)
        else:
            mc = acc = 0.0
        table.append(ReliabilityBin(float(edges[m]), float(edges[m + 1]), c, float(mc), float(acc)))
    return ReliabilityTable(table, float(total), n)


def threshold_mask(p: ProbabilityField, class_label: str, threshold: float | str = "argmax") -> RegionMask:
    """Binary mask for one class, by argmax or by ``p_class >= threshold``."""
    if class_label not in p.class_labels:
        raise ValueError(f"unknown class {class_label!r}")
    k = p.class_labels.index(class_label)
    if threshold == "argmax":
        inside = p.argmax() == k
    else:
        inside = p.probs[k] >= float(threshold)
    inside &= p.valid
    return RegionMask.from_bool(inside, p._transform(), class_label, p.valid)
