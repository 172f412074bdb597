"""
Evaluation quantities: per-image RMSE and correlation, aggregation by method
and condition, occlusion stratification, timing and error tagging.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd

from limbtrace.core.config import settings
from limbtrace.core.exceptions import CoverageGap, DegenerateVariance, ShapeError, ValidationError
from limbtrace.models.scene import OcclusionRegime
from limbtrace.models.target import PositionTarget
from limbtrace.schemas.report import BucketRow, EvalRecord, EvalReport, Method, SummaryRow

logger = logging.getLogger(__name__)

T = TypeVar("T")

TOTAL = "Total"

EXTREME_OCCLUSION = 0.3
THIN_RADIUS_PX = 1.25
SHARP_BEND_DEG = 35.0
UNUSUAL_LEAN_DEG = 8.0
USUAL_MERGE_RANGE = (0.48, 0.62)

REPORT_METADATA = {
    "std": "population (ddof=0)",
    "r_channels": "branch channels concatenated before correlating",
    "bucket_interval": "half-open [start, end)",
    "gap_policy": "uncovered rows scored against the nearest predicted row of the same branch",
    "total_row": "pooled over all records of the method",
}


@dataclass
class Score:
    """Per-image scores of one prediction."""
    rmse: float
    r: float
    gaps: int


def _check_pair(gt: PositionTarget, pred: PositionTarget) -> None:
    if gt.coords.shape != pred.coords.shape:
        raise ShapeError(f"ground truth {gt.coords.shape} and prediction {pred.coords.shape} differ")


def rmse(gt: PositionTarget, pred: PositionTarget) -> float:
    """
    Root mean squared error over every branch entry valid in the ground truth.

    Raises:
        ShapeError: If the targets differ in shape.
        ValidationError: If the ground truth has no valid entry.
        CoverageGap: If the prediction misses a ground-truth-valid entry.
    """
    _check_pair(gt, pred)
    if not gt.valid.any():
        raise ValidationError("ground truth has no valid rows")
    missing = int(np.count_nonzero(gt.valid & ~pred.valid))
    if missing:
        raise CoverageGap(f"prediction misses {missing} ground-truth entries", gaps=missing)
    diff = gt.coords[gt.valid] - pred.coords[gt.valid]
    return float(np.sqrt(np.mean(diff ** 2)))


def pearson_r(gt: PositionTarget, pred: PositionTarget) -> float:
    """
    Pearson correlation over entries valid in both targets, channels concatenated.

    Raises:
        ShapeError: If the targets differ in shape.
        DegenerateVariance: With fewer than two shared entries or a constant series.
    """
    _check_pair(gt, pred)
    both = gt.valid & pred.valid
    if np.count_nonzero(both) < 2:
        raise DegenerateVariance("need at least two entries to correlate")
    g = gt.coords[both]
    p = pred.coords[both]
    dg, dp = g - g.mean(), p - p.mean()
    denominator = math.sqrt(float(dg @ dg) * float(dp @ dp))
    if denominator == 0.0:
        raise DegenerateVariance("one of the series is constant")
    return float(np.clip((dp @ dg) / denominator, -1.0, 1.0))


def fill_coverage_gaps(gt: PositionTarget, pred: PositionTarget) -> Tuple[PositionTarget, int]:
    """
    Extend a prediction over every ground-truth-valid entry it misses.

    A missing entry takes the value of the nearest predicted row of the same
    branch (earlier row on ties), else of the nearest predicted row of any
    other branch, else the canvas center.
    """
    _check_pair(gt, pred)
    missing = gt.valid & ~pred.valid
    gaps = int(np.count_nonzero(missing))
    if gaps == 0:
        return pred, 0

    coords = pred.coords.copy()
    valid = pred.valid.copy()
    positions = np.arange(pred.length)
    for b, line in zip(*np.nonzero(missing)):
        candidates = [b] + [c for c in range(pred.n_branches) if c != b]
        value = (pred.extent - 1) / 2.0
        for c in candidates:
            rows = positions[pred.valid[c]]
            if rows.size:
                value = pred.coords[c, rows[np.argmin(np.abs(rows - line))]]
                break
        coords[b, line] = value
        valid[b, line] = True
    return PositionTarget(coords, valid, pred.width, pred.height, pred.axis), gaps


def score_prediction(gt: PositionTarget, pred: PositionTarget, strict: bool = False) -> Score:
    """
    RMSE, correlation and gap count of one prediction.

    Lenient mode fills coverage gaps before scoring; strict mode lets
    CoverageGap propagate. A constant prediction has no linear relationship
    with the ground truth and scores r = 0.
    """
    gaps = 0
    if not strict:
        pred, gaps = fill_coverage_gaps(gt, pred)
        if gaps:
            logger.warning("Filled %s uncovered ground-truth entries", gaps)
    error = rmse(gt, pred)
    try:
        r = pearson_r(gt, pred)
    except DegenerateVariance as exc:
        logger.warning("Correlation undefined (%s); scoring r = 0", exc)
        r = 0.0
    return Score(rmse=error, r=r, gaps=gaps)


def timed(stage_label: str, operation: Callable[..., T], *args: Any, **kwargs: Any) -> Tuple[T, float]:
    """Run ``operation`` and return its result with the elapsed wall-clock milliseconds."""
    start = time.perf_counter()
    result = operation(*args, **kwargs)
    elapsed = (time.perf_counter() - start) * 1000.0
    logger.debug("%s took %.3f ms", stage_label, elapsed)
    return result, elapsed


def records_frame(records: Sequence[EvalRecord]) -> pd.DataFrame:
    """One row per record, timings flattened into model_ms / curve_fit_ms / total_ms."""
    rows = []
    for record in records:
        row = record.model_dump(mode="json", exclude={"timings"})
        row["tags"] = ";".join(record.tags)
        timings = record.timings
        row["model_ms"] = timings.model if timings else np.nan
        row["curve_fit_ms"] = timings.curve_fit if timings else np.nan
        row["total_ms"] = timings.total if timings else np.nan
        rows.append(row)
    return pd.DataFrame(rows)


def _statistics(frame: pd.DataFrame, keys: List[str]) -> pd.DataFrame:
    return frame.groupby(keys, sort=False).agg(
        count=("rmse", "size"),
        rmse_mean=("rmse", "mean"),
        rmse_std=("rmse", lambda s: s.std(ddof=0)),
        r_mean=("r", "mean"),
        r_std=("r", lambda s: s.std(ddof=0)),
    ).reset_index()


def _method_order(value: str) -> int:
    return [m.value for m in Method].index(value)


def _condition_order(value: str) -> Tuple[int, str]:
    known = [r.value for r in OcclusionRegime]
    return (known.index(value), value) if value in known else (len(known), str(value))


def stratify_by_occlusion(
    records: Sequence[EvalRecord],
    bucket_width: float = settings.OCCLUSION_BUCKET_WIDTH,
) -> List[BucketRow]:
    """
    Mean, population std and count per method per occlusion bucket.

    Bucket i covers [i * width, (i + 1) * width); empty buckets are omitted.
    """
    if not records:
        return []
    frame = records_frame(records)
    # Rounding keeps exact boundaries such as 0.05 / 0.05 in the upper bucket
    frame["bucket"] = np.floor(np.round(frame["occlusion_fraction"] / bucket_width, 9)).astype(int)
    stats = _statistics(frame, ["method", "bucket"])
    stats = stats.sort_values(
        ["method", "bucket"], key=lambda col: col.map(_method_order) if col.name == "method" else col
    )
    return [
        BucketRow(
            method=row["method"],
            bucket_start=round(int(row["bucket"]) * bucket_width, 9),
            bucket_end=round((int(row["bucket"]) + 1) * bucket_width, 9),
            count=int(row["count"]),
            rmse_mean=float(row["rmse_mean"]),
            rmse_std=float(row["rmse_std"]),
            r_mean=float(row["r_mean"]),
            r_std=float(row["r_std"]),
        )
        for _, row in stats.iterrows()
    ]


def aggregate_report(
    records: Sequence[EvalRecord],
    condition_key: str = "condition",
    bucket_width: float = settings.OCCLUSION_BUCKET_WIDTH,
) -> EvalReport:
    """
    Mean and population std of RMSE and r per method and condition.

    Each method also gets a Total row pooled over all of its records (not a
    mean of the per-condition means).

    Raises:
        ValidationError: If there are no records or the key is not a record field.
    """
    if not records:
        raise ValidationError("cannot aggregate an empty record set")
    frame = records_frame(records)
    if condition_key not in frame.columns:
        raise ValidationError(f"records have no field '{condition_key}'")
    frame[condition_key] = frame[condition_key].astype(str)

    per_condition = _statistics(frame, ["method", condition_key])
    pooled = _statistics(frame, ["method"])
    pooled[condition_key] = TOTAL
    table = pd.concat([per_condition, pooled], ignore_index=True)
    conditions = sorted(per_condition[condition_key].unique(), key=_condition_order)
    rank = {condition: i for i, condition in enumerate(conditions)}
    rank[TOTAL] = len(conditions)
    table["_method"] = table["method"].map(_method_order)
    table["_condition"] = table[condition_key].map(rank)
    table = table.sort_values(["_method", "_condition"])

    summary = [
        SummaryRow(
            method=row["method"],
            condition=row[condition_key],
            count=int(row["count"]),
            rmse_mean=float(row["rmse_mean"]),
            rmse_std=float(row["rmse_std"]),
            r_mean=float(row["r_mean"]),
            r_std=float(row["r_std"]),
        )
        for _, row in table.iterrows()
    ]
    return EvalReport(
        condition_key=condition_key,
        record_count=len(records),
        summary=summary,
        buckets=stratify_by_occlusion(records, bucket_width),
        metadata={**REPORT_METADATA, "bucket_width": str(bucket_width)},
    )


def summary_table(report: EvalReport) -> pd.DataFrame:
    """Conditions as rows, '<method>_rmse' / '<method>_r' columns holding 'mean±std'."""
    conditions = list(dict.fromkeys(row.condition for row in report.summary))
    table = pd.DataFrame({report.condition_key: conditions})
    for method in report.methods():
        for metric in ("rmse", "r"):
            cells = []
            for condition in conditions:
                row = report.row(method, condition)
                cells.append(
                    f"{getattr(row, metric + '_mean'):.3f}±{getattr(row, metric + '_std'):.3f}" if row else ""
                )
            table[f"{method.value}_{metric}"] = cells
    return table


def timing_table(records: Sequence[EvalRecord]) -> pd.DataFrame:
    """Mean stage times per method; the regressor reports a zero curve-fit stage."""
    frame = records_frame(records)
    table = frame.groupby("method", sort=False)[["model_ms", "curve_fit_ms", "total_ms"]].mean().reset_index()
    return table.sort_values("method", key=lambda col: col.map(_method_order)).reset_index(drop=True)


def tag_errors(features: Mapping[str, Optional[float]], occlusion_fraction: float) -> List[str]:
    """
    Error categories that plausibly explain a large-error prediction.

    Returns every matching category, or ``["others"]`` when none applies.
    """
    tags = []
    if occlusion_fraction >= EXTREME_OCCLUSION:
        tags.append("extremely_occluded")
    min_radius = features.get("min_radius")
    if min_radius is not None and min_radius < THIN_RADIUS_PX:
        tags.append("thin_branch")
    bend = features.get("max_bend_deg")
    if bend is not None and bend >= SHARP_BEND_DEG:
        tags.append("sharp_bend")
    lean = features.get("trunk_lean_deg")
    merge = features.get("merge_fraction")
    if (lean is not None and lean >= UNUSUAL_LEAN_DEG) or (
        merge is not None and not USUAL_MERGE_RANGE[0] <= merge <= USUAL_MERGE_RANGE[1]
    ):
        tags.append("unusual_shape")
    return tags or ["others"]


def counts_by_tag(records: Sequence[EvalRecord]) -> Dict[str, Dict[str, int]]:
    """Per-method counts of each error tag."""
    counts: Dict[str, Dict[str, int]] = {}
    for record in records:
        bucket = counts.setdefault(record.method.value, {})
        for tag in record.tags:
            bucket[tag] = bucket.get(tag, 0) + 1
    return counts
