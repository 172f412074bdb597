import numpy as np
import pytest

from limbtrace.core.exceptions import InsufficientPoints, NoBranchDetected, ShapeError, ValidationError
from limbtrace.models.curves import CurveMethod, WaypointPath, WaypointRow
from limbtrace.models.scene import OcclusionRegime, TreeKind
from limbtrace.services.curvefit import (
    CubicSplineFitter,
    CurveFitting,
    blob_filter,
    extract_waypoints,
    fit_mask,
    fit_polynomial,
    mask_to_positions,
    split_left_right,
)
from limbtrace.services.synthdata import generate_scene, rasterize


def normal_equations_fit(rows, cols, order, query):
    """Independent least-squares oracle on the same [-1, 1] row normalization."""
    middle = (rows.max() + rows.min()) / 2.0
    half = (rows.max() - rows.min()) / 2.0
    vander = np.vander((rows - middle) / half, order + 1, increasing=True)
    coefficients = np.linalg.solve(vander.T @ vander, vander.T @ cols)
    return np.vander((query - middle) / half, order + 1, increasing=True) @ coefficients


def y_mask():
    """Two 1-pixel branches at columns 10 and 30 joining a trunk at column 20 from row 20."""
    mask = np.zeros((40, 40), dtype=bool)
    mask[:20, 10] = True
    mask[:20, 30] = True
    mask[20:, 20] = True
    return mask


class TestBlobFilter:
    def test_component_below_threshold_removed(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[:8, :8] = True
        assert not blob_filter(mask, 65).any()

    def test_component_at_threshold_kept(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[:8, :8] = True
        mask[8, 0] = True
        np.testing.assert_array_equal(blob_filter(mask, 65), mask)

    def test_diagonal_pixels_are_connected(self):
        mask = np.zeros((70, 70), dtype=bool)
        mask[np.arange(65), np.arange(65)] = True
        assert blob_filter(mask, 65).sum() == 65

    def test_empty_mask(self):
        assert not blob_filter(np.zeros((8, 8), dtype=bool)).any()


class TestExtractWaypoints:
    def test_symmetric_run(self):
        mask = np.zeros((3, 30), dtype=bool)
        mask[1, 10:13] = True
        assert extract_waypoints(mask) == [WaypointRow(1, (11.0,))]

    def test_two_runs(self):
        mask = np.zeros((1, 30), dtype=bool)
        mask[0, 2:4] = True
        mask[0, 20:23] = True
        assert extract_waypoints(mask) == [WaypointRow(0, (2.5, 21.0))]

    def test_empty_mask(self):
        assert extract_waypoints(np.zeros((5, 5), dtype=bool)) == []


class TestSplitLeftRight:
    def test_min_left_max_right(self):
        left, right = split_left_right([WaypointRow(0, (5.0, 40.0))])
        assert list(left.cols) == [5.0] and list(right.cols) == [40.0]

    def test_y_mask_matches_geometry(self):
        left, right = split_left_right(extract_waypoints(y_mask()))
        np.testing.assert_array_equal(left.rows, np.arange(40))
        np.testing.assert_array_equal(left.cols, [10.0] * 20 + [20.0] * 20)
        np.testing.assert_array_equal(right.cols, [30.0] * 20 + [20.0] * 20)

    def test_single_center_above_split_joins_nearer_path(self):
        rows = [WaypointRow(r, (10.0, 30.0)) for r in range(5)]
        rows.append(WaypointRow(5, (28.0,)))
        rows += [WaypointRow(r, (12.0, 28.0)) for r in range(6, 10)]
        left, right = split_left_right(rows)
        assert 5 not in left.rows
        assert 28.0 == right.cols[list(right.rows).index(5)]

    def test_leading_single_centers_go_left(self):
        rows = [WaypointRow(0, (20.0,)), WaypointRow(1, (10.0, 30.0))]
        left, right = split_left_right(rows)
        assert list(left.rows) == [0, 1]
        assert list(right.rows) == [1]

    def test_single_branch_keeps_every_center(self):
        mask = np.zeros((30, 30), dtype=bool)
        mask[:, 14:17] = True
        (path,) = split_left_right(extract_waypoints(mask), n_branches=1)
        np.testing.assert_array_equal(path.rows, np.arange(30))
        np.testing.assert_array_equal(path.cols, np.full(30, 15.0))

    def test_no_waypoints(self):
        with pytest.raises(NoBranchDetected):
            split_left_right([])

    def test_unsupported_branch_count(self):
        with pytest.raises(ShapeError):
            split_left_right([WaypointRow(0, (1.0,))], n_branches=3)


class TestFitPolynomial:
    def test_straight_line_is_exact(self):
        rows = np.arange(20.0)
        curve = fit_polynomial(WaypointPath(rows, 3.0 + 0.5 * rows), order=5)
        np.testing.assert_allclose(curve.evaluate(rows), 3.0 + 0.5 * rows, atol=1e-9)
        np.testing.assert_allclose(curve.coefficients[2:], 0.0, atol=1e-9)
        assert curve.residual_rms < 1e-9

    def test_cubic_matches_normal_equations(self):
        rows = np.arange(20.0)
        cols = 20.0 * (rows / 19.0) ** 3
        curve = fit_polynomial(WaypointPath(rows, cols), order=5)
        np.testing.assert_allclose(curve.evaluate(rows), cols, atol=1e-6)
        np.testing.assert_allclose(curve.evaluate(rows), normal_equations_fit(rows, cols, 5, rows), atol=1e-6)

    def test_random_paths_match_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            order = trial % 5 + 1
            rows = np.sort(rng.choice(64, size=int(rng.integers(order + 6, 40)), replace=False)).astype(float)
            cols = rng.uniform(0, 63, size=rows.size)
            query = np.arange(rows.min(), rows.max() + 1)
            expected = normal_equations_fit(rows, cols, order, query)
            fitted = fit_polynomial(WaypointPath(rows, cols), order=order).evaluate(query)
            np.testing.assert_allclose(fitted, expected, rtol=1e-6, atol=1e-6)

    def test_order_drops_with_few_points(self):
        rows = np.array([0.0, 3.0, 7.0, 12.0])
        cols = np.array([4.0, 9.0, 2.0, 6.0])
        curve = fit_polynomial(WaypointPath(rows, cols), order=5)
        assert curve.order == 3
        np.testing.assert_allclose(curve.evaluate(rows), cols, atol=1e-9)

    def test_perturbing_coefficients_never_helps(self):
        rng = np.random.default_rng(3)
        rows = np.arange(30.0)
        cols = 10 + 0.2 * rows + rng.normal(0, 1.0, size=30)
        curve = fit_polynomial(WaypointPath(rows, cols), order=5)
        best = np.sum((curve.evaluate(rows) - cols) ** 2)
        base = curve.coefficients.copy()
        for j in range(base.size):
            for delta in (-1e-3, 1e-3):
                curve.coefficients = base.copy()
                curve.coefficients[j] += delta
                assert np.sum((curve.evaluate(rows) - cols) ** 2) > best
        curve.coefficients = base

    def test_single_row(self):
        with pytest.raises(InsufficientPoints):
            fit_polynomial(WaypointPath([4.0, 4.0], [1.0, 2.0]))

    def test_order_zero(self):
        with pytest.raises(ValidationError):
            fit_polynomial(WaypointPath([0.0, 1.0], [1.0, 2.0]), order=0)


class TestMaskToPositions:
    @pytest.mark.parametrize("seed", range(5))
    def test_trunk_mask_recovers_centerline(self, seed):
        bundle = rasterize(generate_scene(TreeKind.TRUNK_ONLY, (64, 64), OcclusionRegime.NONE, seed))
        prediction = mask_to_positions(bundle.whole_mask, n_branches=1, height=64)
        both = prediction.valid & bundle.target.valid
        assert both.sum() >= 60
        assert np.mean(np.abs(prediction.coords[both] - bundle.target.coords[both])) <= 1.5

    @pytest.mark.parametrize("seed", range(3))
    def test_y_mask_tracks_both_branches(self, seed):
        bundle = rasterize(generate_scene(TreeKind.Y_SHAPED, (64, 64), OcclusionRegime.NONE, seed))
        prediction = mask_to_positions(bundle.whole_mask, n_branches=2)
        both = prediction.valid & bundle.target.valid
        assert np.mean(np.abs(prediction.coords[both] - bundle.target.coords[both])) <= 3.0

    def test_y_mask_paths(self):
        prediction = mask_to_positions(y_mask(), n_branches=2, min_area=10)
        assert prediction.valid.all()
        assert prediction.coords[0, 0] < prediction.coords[1, 0]
        assert prediction.invariant_violations() == []

    def test_noise_blob_is_ignored(self):
        bundle = rasterize(generate_scene(TreeKind.TRUNK_ONLY, (64, 64), OcclusionRegime.NONE, 1))
        noisy = bundle.whole_mask.copy()
        noisy[58:63, 0:6] = True
        assert not np.any(noisy[58:63, 0:7] & bundle.whole_mask[58:63, 0:7])
        clean = mask_to_positions(bundle.whole_mask, n_branches=1)
        filtered = mask_to_positions(noisy, n_branches=1)
        np.testing.assert_array_equal(filtered.coords, clean.coords)
        np.testing.assert_array_equal(filtered.valid, clean.valid)

    def test_rows_outside_span_are_invalid(self):
        mask = np.zeros((40, 40), dtype=bool)
        mask[10:30, 18:22] = True
        prediction = mask_to_positions(mask, n_branches=1, min_area=10)
        assert prediction.valid[0, 10:30].all()
        assert not prediction.valid[0, :10].any() and not prediction.valid[0, 30:].any()

    def test_empty_mask(self):
        with pytest.raises(NoBranchDetected):
            mask_to_positions(np.zeros((16, 16), dtype=bool))

    def test_height_mismatch(self):
        with pytest.raises(ShapeError):
            mask_to_positions(y_mask(), height=64)

    def test_random_masks_give_one_run_per_branch(self):
        rng = np.random.default_rng(11)
        fitted = 0
        for trial in range(1000):
            n_branches = trial % 2 + 1
            mask = rng.random((24, 24)) < rng.uniform(0.02, 0.4)
            try:
                prediction = mask_to_positions(mask, n_branches=n_branches, min_area=int(rng.integers(1, 4)))
            except NoBranchDetected:
                continue
            fitted += 1
            for row_valid in prediction.valid:
                edges = np.diff(np.concatenate(([0], row_valid.astype(int), [0])))
                assert np.count_nonzero(edges == 1) == 1
            assert prediction.invariant_violations() == []
        assert fitted > 500

    def test_diagnostics(self):
        mask = y_mask()
        mask[0:3, 36:39] = True
        result = fit_mask(mask, 2, min_area=10)
        assert result.diagnostics["filtered_blobs"] == 1
        assert result.diagnostics["waypoint_rows"] == 40
        assert [p["span"] for p in result.diagnostics["paths"]] == [[0, 39], [0, 39]]

    def test_spline_strategy(self):
        prediction = fit_mask(y_mask(), 2, min_area=10, method="cubic_spline").target
        np.testing.assert_allclose(prediction.coords[0, :20], 10.0, atol=1e-9)

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            CurveFitting.get_fitter("bezier")

    def test_only_polynomials_take_an_order(self):
        assert CurveFitting.get_fitter(CurveMethod.POLYNOMIAL, order=3).order == 3
        spline = CurveFitting.get_fitter("cubic_spline", order=3)
        assert isinstance(spline, CubicSplineFitter)
        assert not hasattr(spline, "order")
