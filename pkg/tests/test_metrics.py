import numpy as np
import pytest

from limbtrace.core.exceptions import CoverageGap, DegenerateVariance, ShapeError, ValidationError
from limbtrace.models.target import PositionTarget
from limbtrace.schemas.report import EvalRecord, Method, StageTimings
from limbtrace.services.metrics import (
    TOTAL,
    aggregate_report,
    counts_by_tag,
    fill_coverage_gaps,
    pearson_r,
    rmse,
    score_prediction,
    stratify_by_occlusion,
    summary_table,
    tag_errors,
    timed,
    timing_table,
)


def row_target(values, valid=None, width=64):
    coords = np.atleast_2d(np.asarray(values, dtype=float))
    valid = np.ones_like(coords, dtype=bool) if valid is None else np.atleast_2d(valid)
    return PositionTarget(coords, valid, width, coords.shape[1])


def record(rmse_value, r=0.9, method=Method.HOB_CNN, condition="none", occlusion=0.0, sample_id="s"):
    return EvalRecord(
        sample_id=sample_id,
        method=method,
        condition=condition,
        rmse=rmse_value,
        r=r,
        occlusion_fraction=occlusion,
        timings=StageTimings(model=1.0, curve_fit=0.0, total=1.0),
    )


class TestRmse:
    def test_identical(self):
        gt = row_target([1.0, 5.0, 9.0])
        assert rmse(gt, gt.copy()) == 0.0

    def test_hand_example(self):
        assert rmse(row_target([0.0, 0.0, 0.0]), row_target([3.0, 4.0, 0.0])) == pytest.approx(
            np.sqrt(25.0 / 3.0), abs=1e-9
        )

    def test_constant_offset(self):
        gt = row_target([[1.0, 7.0, 3.0], [10.0, 12.0, 30.0]])
        assert rmse(gt, row_target(gt.coords + 2.0)) == pytest.approx(2.0, abs=1e-9)

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a, b = row_target(rng.uniform(0, 60, 20)), row_target(rng.uniform(0, 60, 20))
        assert rmse(a, b) == pytest.approx(rmse(b, a), abs=1e-12)

    def test_invalid_ground_truth_rows_ignored(self):
        gt = row_target([0.0, 0.0, 50.0], valid=[True, True, False])
        assert rmse(gt, row_target([1.0, 1.0, 0.0])) == pytest.approx(1.0)

    def test_missing_prediction_row(self):
        with pytest.raises(CoverageGap) as info:
            rmse(row_target([1.0, 2.0, 3.0]), row_target([1.0, 2.0, 3.0], valid=[True, False, False]))
        assert info.value.gaps == 2

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            rmse(row_target([1.0, 2.0]), row_target([[1.0, 2.0], [1.0, 2.0]]))

    def test_empty_ground_truth(self):
        with pytest.raises(ValidationError):
            rmse(row_target([1.0, 2.0], valid=[False, False]), row_target([1.0, 2.0]))


class TestPearsonR:
    def test_identity(self):
        gt = row_target([1.0, 4.0, 2.0, 8.0])
        assert pearson_r(gt, gt.copy()) == pytest.approx(1.0, abs=1e-9)

    def test_positive_affine(self):
        gt = row_target([1.0, 4.0, 2.0, 8.0])
        assert pearson_r(gt, row_target(2.0 * gt.coords + 3.0)) == pytest.approx(1.0, abs=1e-9)

    def test_negation(self):
        gt = row_target([1.0, 4.0, 2.0, 8.0])
        assert pearson_r(gt, row_target(-gt.coords)) == pytest.approx(-1.0, abs=1e-9)

    def test_affine_and_sign_properties_on_random_vectors(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            g = rng.uniform(0, 60, 10)
            p = rng.uniform(0, 60, 10)
            r = pearson_r(row_target(g), row_target(p))
            scale, shift = rng.uniform(0.1, 5.0), rng.uniform(-10, 10)
            assert pearson_r(row_target(g), row_target(scale * p + shift)) == pytest.approx(r, abs=1e-9)
            assert pearson_r(row_target(g), row_target(-p)) == pytest.approx(-r, abs=1e-9)

    def test_channels_are_concatenated(self):
        gt = row_target([[0.0, 1.0], [10.0, 11.0]])
        pred = row_target([[0.0, 0.0], [10.0, 10.0]])
        assert pearson_r(gt, pred) > 0.98

    def test_constant_series(self):
        with pytest.raises(DegenerateVariance):
            pearson_r(row_target([5.0, 5.0, 5.0]), row_target([1.0, 2.0, 3.0]))

    def test_single_entry(self):
        with pytest.raises(DegenerateVariance):
            pearson_r(row_target([5.0]), row_target([1.0]))


class TestScorePrediction:
    def test_gaps_take_nearest_row_of_same_branch(self):
        gt = row_target([10.0, 10.0, 10.0, 10.0])
        pred = row_target([0.0, 12.0, 14.0, 0.0], valid=[False, True, True, False])
        filled, gaps = fill_coverage_gaps(gt, pred)
        assert gaps == 2
        np.testing.assert_array_equal(filled.coords[0], [12.0, 12.0, 14.0, 14.0])

    def test_gaps_fall_back_to_other_branch_then_center(self):
        gt = row_target([[1.0, 2.0], [3.0, 4.0]])
        pred = row_target([[0.0, 0.0], [7.0, 9.0]], valid=[[False, False], [True, True]])
        filled, _ = fill_coverage_gaps(gt, pred)
        np.testing.assert_array_equal(filled.coords[0], [7.0, 9.0])
        empty = row_target([[0.0, 0.0]], valid=[[False, False]])
        centered, _ = fill_coverage_gaps(row_target([[1.0, 2.0]]), empty)
        np.testing.assert_array_equal(centered.coords[0], [31.5, 31.5])

    def test_lenient_and_strict(self):
        gt = row_target([10.0, 10.0, 10.0])
        pred = row_target([0.0, 12.0, 12.0], valid=[False, True, True])
        score = score_prediction(gt, pred)
        assert score.gaps == 1 and score.rmse == pytest.approx(2.0)
        with pytest.raises(CoverageGap):
            score_prediction(gt, pred, strict=True)

    def test_constant_prediction_scores_zero_r(self):
        score = score_prediction(row_target([1.0, 2.0, 3.0]), row_target([2.0, 2.0, 2.0]))
        assert score.r == 0.0


class TestStratifyByOcclusion:
    def test_unoccluded_records_share_first_bucket(self):
        buckets = stratify_by_occlusion([record(1.0), record(2.0)])
        assert len(buckets) == 1
        assert (buckets[0].bucket_start, buckets[0].bucket_end) == (0.0, 0.05)

    def test_boundary_belongs_to_upper_bucket(self):
        (bucket,) = stratify_by_occlusion([record(1.0, occlusion=0.05)])
        assert bucket.bucket_start == 0.05 and bucket.bucket_end == 0.1

    def test_population_statistics(self):
        (bucket,) = stratify_by_occlusion([record(2.0, occlusion=0.3), record(4.0, occlusion=0.31)])
        assert bucket.count == 2
        assert bucket.rmse_mean == pytest.approx(3.0)
        assert bucket.rmse_std == pytest.approx(1.0)

    def test_counts_partition_records(self):
        rng = np.random.default_rng(2)
        records = [
            record(float(rng.uniform(0, 5)), method=m, occlusion=float(rng.uniform(0, 0.6)))
            for m in Method
            for _ in range(30)
        ]
        buckets = stratify_by_occlusion(records)
        assert sum(b.count for b in buckets) == len(records)
        assert [b.method for b in buckets][0] is Method.HOB_CNN

    def test_empty(self):
        assert stratify_by_occlusion([]) == []


class TestAggregateReport:
    def test_single_record(self):
        report = aggregate_report([record(2.5, r=0.8)])
        row = report.row(Method.HOB_CNN, "none")
        assert (row.count, row.rmse_mean, row.rmse_std, row.r_mean, row.r_std) == (1, 2.5, 0.0, 0.8, 0.0)
        assert report.row(Method.HOB_CNN, TOTAL).rmse_mean == 2.5

    def test_total_is_pooled_not_mean_of_means(self):
        records = [record(1.0, condition="none"), record(2.0, condition="medium"), record(6.0, condition="medium")]
        total = aggregate_report(records).row(Method.HOB_CNN, TOTAL)
        assert total.rmse_mean == pytest.approx(3.0)
        assert total.rmse_std == pytest.approx(np.std([1.0, 2.0, 6.0]))
        assert total.rmse_mean != pytest.approx((1.0 + 4.0) / 2.0)

    def test_pooled_total_equals_combined_moments(self):
        rng = np.random.default_rng(9)
        values = {c: rng.uniform(0, 5, 10) for c in ("none", "medium", "heavy")}
        records = [record(float(v), condition=c) for c, vs in values.items() for v in vs]
        report = aggregate_report(records)
        means = [report.row(Method.HOB_CNN, c).rmse_mean for c in values]
        variances = [report.row(Method.HOB_CNN, c).rmse_std ** 2 for c in values]
        pooled_mean = np.mean(means)
        pooled_var = np.mean(variances) + np.mean((np.array(means) - pooled_mean) ** 2)
        total = report.row(Method.HOB_CNN, TOTAL)
        assert total.rmse_mean == pytest.approx(pooled_mean)
        assert total.rmse_std == pytest.approx(np.sqrt(pooled_var))

    def test_table_shape(self):
        records = [
            record(1.0 + i, method=m, condition=c, sample_id=f"{c}{i}")
            for m in Method
            for c in ("heavy", "none", "medium")
            for i in range(2)
        ]
        report = aggregate_report(records)
        assert len(report.summary) == 12
        assert sum(r.count for r in report.summary if r.condition != TOTAL) == report.record_count == 18
        assert [r.condition for r in report.summary[:4]] == ["none", "medium", "heavy", TOTAL]
        table = summary_table(report)
        assert table.shape == (4, 1 + 3 * 2)
        assert list(table["condition"]) == ["none", "medium", "heavy", TOTAL]
        assert table.loc[0, "hob_cnn_rmse"] == "1.500±0.500"
        assert report.metadata["std"].startswith("population")

    def test_empty_records(self):
        with pytest.raises(ValidationError):
            aggregate_report([])

    def test_unknown_condition_key(self):
        with pytest.raises(ValidationError):
            aggregate_report([record(1.0)], condition_key="season")


class TestTimed:
    def test_returns_result_and_elapsed(self):
        result, elapsed = timed("sum", sum, [1, 2, 3])
        assert result == 6
        assert elapsed >= 0.0

    def test_noop_is_fast(self):
        elapsed = min(timed("noop", lambda: None)[1] for _ in range(20))
        assert elapsed < 1.0

    def test_timing_table(self):
        records = [
            EvalRecord(
                sample_id="a", method=Method.VISIBLE_CF, condition="none", rmse=1.0, r=0.5,
                occlusion_fraction=0.0, timings=StageTimings(model=4.0, curve_fit=2.0, total=6.5),
            ),
            record(1.0),
        ]
        table = timing_table(records)
        assert list(table["method"]) == ["hob_cnn", "visible_cf"]
        assert table.loc[0, "curve_fit_ms"] == 0.0
        assert table.loc[1, "total_ms"] >= table.loc[1, "model_ms"] + table.loc[1, "curve_fit_ms"]


class TestErrorTags:
    def test_matching_categories(self):
        features = {"min_radius": 1.0, "max_bend_deg": 10.0, "trunk_lean_deg": 12.0, "merge_fraction": 0.55}
        assert tag_errors(features, 0.4) == ["extremely_occluded", "thin_branch", "unusual_shape"]

    def test_unexplained_error(self):
        features = {"min_radius": 2.0, "max_bend_deg": 10.0, "trunk_lean_deg": 1.0, "merge_fraction": 0.55}
        assert tag_errors(features, 0.1) == ["others"]

    def test_counts(self):
        tagged = [record(5.0), record(6.0, method=Method.WHOLE_CF)]
        tagged[0].tags = ["thin_branch", "sharp_bend"]
        tagged[1].tags = ["thin_branch"]
        assert counts_by_tag(tagged) == {"hob_cnn": {"thin_branch": 1, "sharp_bend": 1}, "whole_cf": {"thin_branch": 1}}
