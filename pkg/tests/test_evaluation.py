import json

import numpy as np
import pytest
import torch

from limbtrace.core.exceptions import NoBranchDetected
from limbtrace.schemas.config import EvaluationConfig, SegVariant
from limbtrace.schemas.report import Method
from limbtrace.services import metrics
from limbtrace.services.evaluation import (
    MethodOutput,
    evaluate_samples,
    run_baseline,
    run_hob,
    score_output,
    write_reports,
)
from limbtrace.services.regressor import build_model
from limbtrace.services.segbaseline import build_segmodel


@pytest.fixture
def blind_segmenter(seg_spec):
    state = build_segmodel(seg_spec)
    with torch.no_grad():
        state.network.final.bias.fill_(-100.0)
    return state


@pytest.fixture
def states(small_spec, seg_spec, blind_segmenter):
    return {
        Method.HOB_CNN: build_model(small_spec),
        Method.VISIBLE_CF: blind_segmenter,
        Method.WHOLE_CF: build_segmodel(seg_spec.model_copy(update={"variant": SegVariant.WHOLE})),
    }


class TestPipelines:
    def test_regressor_has_no_curve_fit_stage(self, small_spec, y_sample):
        output = run_hob(build_model(small_spec), y_sample)
        assert output.timings.curve_fit == 0.0
        assert output.timings.total == output.timings.model
        assert output.target.valid.all()

    def test_empty_mask_gives_uncovered_prediction(self, blind_segmenter, y_sample):
        output = run_baseline(blind_segmenter, y_sample, EvaluationConfig())
        assert not output.target.valid.any()
        assert output.diagnostics == {"error": "no_branch_detected"}
        assert output.timings.total >= output.timings.model + output.timings.curve_fit

    def test_strict_coverage_propagates(self, blind_segmenter, y_sample):
        with pytest.raises(NoBranchDetected):
            run_baseline(blind_segmenter, y_sample, EvaluationConfig(strict_coverage=True))

    def test_stage_timings(self, small_spec, seg_spec, y_sample):
        regressor = build_model(small_spec)
        segmenters = {variant: build_segmodel(seg_spec.model_copy(update={"variant": variant})) for variant in SegVariant}
        for state in segmenters.values():
            with torch.no_grad():
                state.network.final.bias.fill_(100.0)

        def median_total(run):
            run()
            outputs = [run() for _ in range(5)]
            return float(np.median([o.timings.total for o in outputs])), outputs

        hob_total, _ = median_total(lambda: run_hob(regressor, y_sample))
        for state in segmenters.values():
            baseline_total, outputs = median_total(lambda: run_baseline(state, y_sample, EvaluationConfig()))
            assert all(o.timings.curve_fit > 0.0 for o in outputs)
            assert hob_total < baseline_total

    def test_uncovered_prediction_scores_with_gaps(self, blind_segmenter, y_sample):
        output = run_baseline(blind_segmenter, y_sample, EvaluationConfig())
        record = score_output(y_sample, Method.VISIBLE_CF, output, EvaluationConfig(worst_rmse_px=0.0))
        assert record.gaps == int(y_sample.target.valid.sum())
        assert record.r == 0.0
        assert record.tags


class TestEvaluateSamples:
    def test_one_record_per_method_and_sample(self, states, y_sample, tmp_path):
        records = evaluate_samples([y_sample], states, EvaluationConfig(), prediction_dir=tmp_path)
        assert [r.method for r in records] == list(Method)
        assert all(r.sample_id == y_sample.sample_id for r in records)
        written = tmp_path / y_sample.sample_id
        assert (written / "hob_cnn.csv").exists()
        diagnostics = json.loads((written / "fit_diagnostics.json").read_text())
        assert "visible_cf" in diagnostics

    def test_report_files(self, states, y_sample, tmp_path):
        records = evaluate_samples([y_sample], states, EvaluationConfig())
        report = metrics.aggregate_report(records)
        paths = write_reports(report, records, tmp_path, worst_rmse_px=0.0)
        assert all(p.exists() for p in paths.values())
        worst = paths["worst.csv"].read_text().splitlines()
        assert len(worst) == 1 + len(records)
        tags = json.loads(paths["error_tags.json"].read_text())
        assert set(tags) == {m.value for m in Method}


def test_score_output_leaves_good_predictions_untagged(y_sample):
    output = MethodOutput(target=y_sample.target.copy(), timings=None)
    record = score_output(y_sample, Method.HOB_CNN, output, EvaluationConfig())
    assert record.rmse == 0.0 and record.r == pytest.approx(1.0)
    assert record.tags == []
    np.testing.assert_array_equal(output.target.coords, y_sample.target.coords)
