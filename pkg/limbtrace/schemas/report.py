"""
Pydantic schemas for evaluation records and aggregated reports.

Records hold per-image scores; reports hold mean/std tables per method and
condition plus the occlusion-bucket series. Timings live on the records but
are kept out of the aggregated report so that reruns produce identical files.
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class Method(str, Enum):
    """Evaluated prediction pipelines."""
    HOB_CNN = "hob_cnn"
    VISIBLE_CF = "visible_cf"
    WHOLE_CF = "whole_cf"


class StageTimings(BaseModel):
    """Wall-clock milliseconds per pipeline stage; curve_fit is 0 for the regressor, which has no such stage."""

    model: float = Field(..., ge=0)
    curve_fit: float = Field(0.0, ge=0)
    total: float = Field(..., ge=0)


class EvalRecord(BaseModel):
    """Scores of one method on one held-out image."""

    sample_id: str
    method: Method
    condition: str = Field(..., description="Occlusion regime of the sample.")
    rmse: float = Field(..., ge=0, description="Root mean squared coordinate error in pixels.")
    r: float = Field(..., ge=-1, le=1, description="Pearson correlation over both channels concatenated.")
    occlusion_fraction: float = Field(..., ge=0, le=1)
    gaps: int = Field(0, ge=0, description="Ground-truth entries the prediction did not cover.")
    timings: Optional[StageTimings] = None
    tags: List[str] = Field(default_factory=list)


class SummaryRow(BaseModel):
    method: Method
    condition: str
    count: int
    rmse_mean: float
    rmse_std: float
    r_mean: float
    r_std: float


class BucketRow(BaseModel):
    """Statistics of one method over records with occlusion in [bucket_start, bucket_end)."""

    method: Method
    bucket_start: float
    bucket_end: float
    count: int
    rmse_mean: float
    rmse_std: float
    r_mean: float
    r_std: float


class EvalReport(BaseModel):
    """Aggregated evaluation: per-(method, condition) table, bucket series and conventions."""

    condition_key: str = "condition"
    record_count: int
    summary: List[SummaryRow]
    buckets: List[BucketRow] = Field(default_factory=list)
    metadata: Dict[str, str] = Field(default_factory=dict)

    def methods(self) -> List[Method]:
        return list(dict.fromkeys(row.method for row in self.summary))

    def row(self, method: Method, condition: str) -> Optional[SummaryRow]:
        return next(
            (r for r in self.summary if r.method == Method(method) and r.condition == condition),
            None,
        )
