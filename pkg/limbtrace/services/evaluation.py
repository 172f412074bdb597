"""Runs the three prediction pipelines on held-out samples and writes the report files."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from limbtrace.core.exceptions import NoBranchDetected
from limbtrace.models.sample import Sample
from limbtrace.models.state import ModelState
from limbtrace.models.target import PositionTarget
from limbtrace.schemas.config import EvaluationConfig
from limbtrace.schemas.report import EvalRecord, EvalReport, Method, StageTimings
from limbtrace.services import metrics
from limbtrace.services.curvefit import FitResult, fit_mask
from limbtrace.services.regressor import predict_positions
from limbtrace.services.segbaseline import segment

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PREDICTION_FILES = {method: f"{method.value}.csv" for method in Method}
TIMING_COLUMNS = ["model_ms", "curve_fit_ms", "total_ms"]


@dataclass
class MethodOutput:
    """Prediction of one method on one sample with its stage timings."""
    target: PositionTarget
    timings: StageTimings
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def run_hob(state: ModelState, sample: Sample) -> MethodOutput:
    target, elapsed = metrics.timed("hob_cnn model", predict_positions, state, sample.image)
    return MethodOutput(target, StageTimings(model=elapsed, curve_fit=0.0, total=elapsed))


def run_baseline(state: ModelState, sample: Sample, evaluation: EvaluationConfig) -> MethodOutput:
    """
    Segment the image, then fit curves on the mask.

    An empty mask yields a prediction without any valid row unless strict
    coverage is requested, in which case NoBranchDetected propagates.
    """
    n_branches = sample.target.n_branches

    def pipeline() -> Dict[str, Any]:
        mask, model_ms = metrics.timed("segmentation", segment, state, sample.image, evaluation.threshold)
        try:
            fitted, fit_ms = metrics.timed(
                "curve fit",
                fit_mask,
                mask,
                n_branches,
                min_area=evaluation.blob_min_area,
                order=evaluation.poly_order,
                method=evaluation.curve_method,
            )
        except NoBranchDetected:
            if evaluation.strict_coverage:
                raise
            logger.warning("No branch detected in %s mask of sample %s", state.spec.variant.value, sample.sample_id)
            height, width = mask.shape
            empty = PositionTarget(
                np.zeros((n_branches, height)), np.zeros((n_branches, height), dtype=bool), width, height
            )
            fitted, fit_ms = FitResult(empty, {"error": "no_branch_detected"}), 0.0
        return {"fitted": fitted, "model_ms": model_ms, "fit_ms": fit_ms}

    stages, total = metrics.timed("baseline total", pipeline)
    timings = StageTimings(model=stages["model_ms"], curve_fit=stages["fit_ms"], total=total)
    return MethodOutput(stages["fitted"].target, timings, stages["fitted"].diagnostics)


def score_output(
    sample: Sample,
    method: Method,
    output: MethodOutput,
    evaluation: EvaluationConfig,
) -> EvalRecord:
    """Score one prediction; records above the worst-case threshold get error tags."""
    score = metrics.score_prediction(sample.target, output.target, strict=evaluation.strict_coverage)
    tags: List[str] = []
    if score.rmse > evaluation.worst_rmse_px:
        tags = metrics.tag_errors(sample.meta.get("features", {}), sample.occlusion_fraction)
    return EvalRecord(
        sample_id=sample.sample_id,
        method=method,
        condition=sample.condition,
        rmse=score.rmse,
        r=score.r,
        occlusion_fraction=sample.occlusion_fraction,
        gaps=score.gaps,
        timings=output.timings,
        tags=tags,
    )


def predict_sample(
    sample: Sample,
    states: Mapping[Method, ModelState],
    evaluation: EvaluationConfig,
) -> Dict[Method, MethodOutput]:
    outputs = {}
    for method in Method:
        if method not in states:
            continue
        if method is Method.HOB_CNN:
            outputs[method] = run_hob(states[method], sample)
        else:
            outputs[method] = run_baseline(states[method], sample, evaluation)
    return outputs


def evaluate_samples(
    samples: Sequence[Sample],
    states: Mapping[Method, ModelState],
    evaluation: EvaluationConfig,
    prediction_dir: Optional[PathLike] = None,
) -> List[EvalRecord]:
    """
    Run every available method on every sample and score it.

    When ``prediction_dir`` is given, each prediction is written to
    ``<prediction_dir>/<sample_id>/<method>.csv``.
    """
    records = []
    for sample in samples:
        outputs = predict_sample(sample, states, evaluation)
        for method, output in outputs.items():
            records.append(score_output(sample, method, output, evaluation))
        if prediction_dir is not None:
            write_predictions(prediction_dir, sample.sample_id, outputs)
    logger.info("Scored %s records over %s samples", len(records), len(samples))
    return records


def write_predictions(prediction_dir: PathLike, sample_id: str, outputs: Mapping[Method, MethodOutput]) -> Path:
    directory = Path(prediction_dir) / sample_id
    directory.mkdir(parents=True, exist_ok=True)
    diagnostics = {}
    for method, output in outputs.items():
        output.target.to_frame().to_csv(directory / PREDICTION_FILES[method], index=False)
        if output.diagnostics:
            diagnostics[method.value] = output.diagnostics
    if diagnostics:
        (directory / "fit_diagnostics.json").write_text(json.dumps(diagnostics, indent=2, sort_keys=True))
    return directory


def write_reports(
    report: EvalReport,
    records: Sequence[EvalRecord],
    out_dir: PathLike,
    worst_rmse_px: float,
) -> Dict[str, Path]:
    """
    Write the report files.

    report.json, report.csv, buckets.csv, records.csv, worst.csv and
    error_tags.json depend only on the scores. Wall-clock measurements go to
    timing.csv alone.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        name: out / name
        for name in ("report.json", "report.csv", "buckets.csv", "records.csv", "worst.csv", "error_tags.json", "timing.csv")
    }

    paths["report.json"].write_text(report.model_dump_json(indent=2))
    metrics.summary_table(report).to_csv(paths["report.csv"], index=False)
    pd.DataFrame([b.model_dump(mode="json") for b in report.buckets]).to_csv(paths["buckets.csv"], index=False)

    frame = metrics.records_frame(records)
    frame.drop(columns=TIMING_COLUMNS).to_csv(paths["records.csv"], index=False)
    worst = [r for r in records if r.rmse > worst_rmse_px]
    worst_frame = frame.loc[frame["rmse"] > worst_rmse_px].drop(columns=TIMING_COLUMNS)
    worst_frame.sort_values(["method", "rmse"], ascending=[True, False]).to_csv(paths["worst.csv"], index=False)
    paths["error_tags.json"].write_text(json.dumps(metrics.counts_by_tag(worst), indent=2, sort_keys=True))

    metrics.timing_table(records).to_csv(paths["timing.csv"], index=False)
    logger.info("Wrote evaluation reports to %s (%s worst cases)", out, len(worst))
    return paths
