"""Design-based accuracy and area estimation from a stratified error matrix.

Strata are rows of the error matrix (tree crop, non-tree crop, buffer, ...);
each stratum maps to one map class. Estimators follow the usual stratified
formulas with stratum weights ``W_h = A_h / A``:

* proportion of reference class ``i``: ``p_i = sum_h W_h n_hi / n_h``
* adjusted area: ``A_i = A * p_i``
* ``SE(p_i) = sqrt(sum_h W_h^2 p_hi (1 - p_hi) / (n_h - 1))``
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

Z95 = 1.96
DEFAULT_THRESHOLD_WEIGHT = 0.005


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorMatrix:
    """Sample counts per (stratum, reference class) with mapped stratum areas."""

    strata: tuple[str, ...]
    ref_classes: tuple[str, ...]
    counts: np.ndarray  # (n_strata, n_ref)
    stratum_areas: np.ndarray  # hectares
    map_class_of_stratum: Mapping[str, str]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        areas = np.asarray(self.stratum_areas, dtype=np.float64)
        object.__setattr__(self, "strata", tuple(self.strata))
        object.__setattr__(self, "ref_classes", tuple(self.ref_classes))
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "stratum_areas", areas)
        if counts.shape != (len(self.strata), len(self.ref_classes)):
            raise EstimationError("counts shape does not match strata x ref_classes")
        if (counts < 0).any():
            raise EstimationError("counts must be >= 0")
        if areas.shape != (len(self.strata),) or (areas < 0).any():
            raise EstimationError("one non-negative area per stratum is required")
        missing = set(self.strata) - set(self.map_class_of_stratum)
        if missing:
            raise EstimationError(f"no map class for strata {sorted(missing)}")

    @property
    def n_h(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total_area(self) -> float:
        return float(self.stratum_areas.sum())

    @property
    def weights(self) -> np.ndarray:
        return stratum_weights(self.stratum_areas)

    def map_classes(self) -> np.ndarray:
        return np.array([self.map_class_of_stratum[s] for s in self.strata])

    def _p_hat(self) -> np.ndarray:
        n_h = self.n_h
        if (n_h == 0).any():
            empty = [s for s, n in zip(self.strata, n_h) if n == 0]
            raise EstimationError(f"empty strata: {empty}")
        return self.counts / n_h[:, None]


def stratum_weights(areas: Sequence[float]) -> np.ndarray:
    a = np.asarray(areas, dtype=np.float64)
    total = a.sum()
    if not total > 0:
        raise EstimationError("total stratum area must be positive")
    return a / total


@dataclass(frozen=True)
class Accuracies:
    user: dict[str, float]
    producer: dict[str, float]
    overall: float
    user_unweighted: dict[str, float]
    producer_unweighted: dict[str, float]
    overall_unweighted: float


def accuracies(m: ErrorMatrix) -> Accuracies:
    """User's, producer's and overall accuracy.

    The weighted forms are the stratified estimators; where a map class is a
    single stratum the weighted UA equals the plain count ratio. Unweighted
    forms are plain ratios of sample counts and are reported for comparison.
    """
    p = m._p_hat()
    W = m.weights
    map_cls = m.map_classes()
    ref = np.array(m.ref_classes)
    agree = map_cls[:, None] == ref[None, :]  # (H, I)
    agree_h = (p * agree).sum(axis=1)
    overall = float((W * agree_h).sum())

    user, user_u = {}, {}
    for c in dict.fromkeys(map_cls):
        rows = map_cls == c
        user[c] = float((W[rows] * agree_h[rows]).sum() / W[rows].sum())
        user_u[c] = float((m.counts[rows] * agree[rows]).sum() / m.counts[rows].sum())

    producer, producer_u = {}, {}
    for i, c in enumerate(m.ref_classes):
        col = W * p[:, i]
        denom = col.sum()
        producer[c] = float(col[map_cls == c].sum() / denom) if denom > 0 else float("nan")
        n_col = m.counts[:, i].sum()
        producer_u[c] = float(m.counts[map_cls == c, i].sum() / n_col) if n_col else float("nan")

    overall_u = float((m.counts * agree).sum() / m.counts.sum())
    return Accuracies(user, producer, overall, user_u, producer_u, overall_u)


@dataclass(frozen=True)
class AreaEstimate:
    class_label: str
    adjusted_area_ha: float
    se_ha: float
    ci95_ha: float
    p_hat: float
    se_p: float
    p_hat_by_stratum: dict[str, float] = field(default_factory=dict)


def adjusted_area(m: ErrorMatrix) -> list[AreaEstimate]:
    """Error-adjusted area and standard error for every reference class."""
    n_h = m.n_h
    if (n_h <= 1).any():
        bad = [s for s, n in zip(m.strata, n_h) if n <= 1]
        raise EstimationError(f"strata with n_h <= 1 cannot carry a variance: {bad}")
    p = m._p_hat()
    W = m.weights
    A = m.total_area
    out = []
    for i, c in enumerate(m.ref_classes):
        p_i = float((W * p[:, i]).sum())
        var = float((W**2 * p[:, i] * (1 - p[:, i]) / (n_h - 1)).sum())
        se_p = math.sqrt(var)
        out.append(
            AreaEstimate(
                class_label=c,
                adjusted_area_ha=A * p_i,
                se_ha=A * se_p,
                ci95_ha=Z95 * A * se_p,
                p_hat=p_i,
                se_p=se_p,
                p_hat_by_stratum={s: float(p[h, i]) for h, s in enumerate(m.strata)},
            )
        )
    return out


@dataclass(frozen=True)
class RegionArea:
    region: str
    initial_ha: float
    adjusted_ha: float | None = None
    w_tc: float | None = None


@dataclass(frozen=True)
class ScalingResult:
    factor: float
    initial_used_ha: float
    adjusted_used_ha: float
    scaled: dict[str, float]
    total_ha: float
    used_regions: tuple[str, ...]


def scaling_adjustment(
    regions: Sequence[RegionArea], threshold_weight: float = DEFAULT_THRESHOLD_WEIGHT
) -> ScalingResult:
    """Ratio of adjusted to mapped area, applied to regions without estimates.

    A region contributes to the factor when it has an adjusted area and its
    tree-crop weight (if known) exceeds ``threshold_weight``. Every other region
    gets ``initial * factor``.
    """
    used = [
        r for r in regions
        if r.adjusted_ha is not None and (r.w_tc is None or r.w_tc > threshold_weight)
    ]
    if not used:
        raise EstimationError("no region carries an adjusted estimate above the threshold")
    init = sum(r.initial_ha for r in used)
    adj = sum(r.adjusted_ha for r in used)
    if init <= 0:
        raise EstimationError("initial area of estimated regions sums to zero")
    factor = adj / init
    used_names = {r.region for r in used}
    scaled = {
        r.region: (r.adjusted_ha if r.region in used_names else r.initial_ha * factor)
        for r in regions
    }
    return ScalingResult(factor, init, adj, scaled, sum(scaled.values()), tuple(r.region for r in used))


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    undefined: bool = False


def f1_from(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def classification_metrics(pred, ref, positive) -> Metrics:
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise ValueError("pred and ref differ in length")
    pp = pred == positive
    rp = ref == positive
    tp = int((pp & rp).sum())
    fp = int((pp & ~rp).sum())
    fn = int((~pp & rp).sum())
    if tp + fp == 0 and tp + fn == 0:
        return Metrics(0.0, 0.0, 0.0, tp, fp, fn, undefined=True)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return Metrics(precision, recall, f1_from(precision, recall), tp, fp, fn)


# --------------------------------------------------------------------------
# I/O


def read_error_matrix(counts_path, strata_path) -> ErrorMatrix:
    """Load the ``stratum_id,ref_class,count`` / ``stratum_id,map_class,area_ha`` pair."""
    with open(strata_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"stratum_id", "map_class", "area_ha"}:
        raise EstimationError("strata CSV must have columns stratum_id,map_class,area_ha")
    strata = [r["stratum_id"] for r in rows]
    if len(set(strata)) != len(strata):
        raise EstimationError("duplicate stratum ids")
    areas = [float(r["area_ha"]) for r in rows]
    map_of = {r["stratum_id"]: r["map_class"] for r in rows}

    with open(counts_path, newline="", encoding="utf-8") as fh:
        crow = list(csv.DictReader(fh))
    if not crow or set(crow[0]) != {"stratum_id", "ref_class", "count"}:
        raise EstimationError("counts CSV must have columns stratum_id,ref_class,count")
    ref_classes = list(dict.fromkeys(r["ref_class"] for r in crow))
    counts = np.zeros((len(strata), len(ref_classes)), dtype=np.int64)
    for r in crow:
        if r["stratum_id"] not in map_of:
            raise EstimationError(f"count row for unknown stratum {r['stratum_id']!r}")
        counts[strata.index(r["stratum_id"]), ref_classes.index(r["ref_class"])] += int(r["count"])
    return ErrorMatrix(tuple(strata), tuple(ref_classes), counts, np.array(areas), map_of)


def read_region_areas(path) -> list[RegionArea]:
    """``region,initial_ha,adjusted_ha,w_tc`` with blanks for unknowns."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"region", "initial_ha", "adjusted_ha", "w_tc"}:
        raise EstimationError("region CSV must have columns region,initial_ha,adjusted_ha,w_tc")

    def opt(v):
        return float(v) if v not in (None, "") else None

    return [RegionArea(r["region"], float(r["initial_ha"]), opt(r["adjusted_ha"]), opt(r["w_tc"])) for r in rows]


def assessment_report(m: ErrorMatrix) -> dict:
    """All intermediate quantities for audit, as plain JSON-able data."""
    acc = accuracies(m)
    report = {
        "strata": [
            {
                "stratum_id": s,
                "map_class": m.map_class_of_stratum[s],
                "area_ha": float(m.stratum_areas[h]),
                "weight": float(m.weights[h]),
                "n_h": int(m.n_h[h]),
                "counts": {c: int(m.counts[h, i]) for i, c in enumerate(m.ref_classes)},
            }
            for h, s in enumerate(m.strata)
        ],
        "total_area_ha": m.total_area,
        "overall_accuracy": acc.overall,
        "overall_accuracy_unweighted": acc.overall_unweighted,
        "user_accuracy": acc.user,
        "user_accuracy_unweighted": acc.user_unweighted,
        "producer_accuracy_area_weighted": acc.producer,
        "producer_accuracy_unweighted": acc.producer_unweighted,
    }
    if (m.n_h > 1).all():
        report["area_estimates"] = [
            {
                "class": e.class_label,
                "adjusted_area_ha": e.adjusted_area_ha,
                "se_ha": e.se_ha,
                "ci95_ha": e.ci95_ha,
                "p_hat": e.p_hat,
                "se_p": e.se_p,
                "p_hat_by_stratum": e.p_hat_by_stratum,
            }
            for e in adjusted_area(m)
        ]
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
