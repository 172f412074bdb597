"""
Curve-fitting stage of the baseline: binary branch mask to per-row positions.

The pipeline removes small blobs, reduces each row to the centers of its
foreground runs, splits those waypoints into Left and Right paths, fits a
curve to each path and evaluates it over the rows the path spans.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import ndimage
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_triangular

from limbtrace.core.config import settings
from limbtrace.core.exceptions import InsufficientPoints, NoBranchDetected, ShapeError, ValidationError
from limbtrace.models.curves import Curve, CurveMethod, PolyCurve, SplineCurve, WaypointPath, WaypointRow
from limbtrace.models.target import PositionTarget

logger = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def label_components(mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """8-connected component labels and the pixel count of each label (index 0 is background)."""
    labels, _ = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)
    return labels, np.bincount(labels.ravel())


def blob_filter(mask: np.ndarray, min_area: int = settings.BLOB_MIN_AREA) -> np.ndarray:
    """Remove 8-connected components with fewer than ``min_area`` pixels."""
    labels, sizes = label_components(mask)
    keep = sizes >= min_area
    keep[0] = False
    return keep[labels]


def extract_waypoints(mask: np.ndarray) -> List[WaypointRow]:
    """One center (mean column) per maximal horizontal foreground run; empty rows are omitted."""
    mask = np.asarray(mask, dtype=bool)
    waypoints = []
    for row in np.flatnonzero(mask.any(axis=1)):
        edges = np.diff(np.concatenate([[0], mask[row].astype(np.int8), [0]]))
        starts = np.flatnonzero(edges == 1)
        stops = np.flatnonzero(edges == -1) - 1
        waypoints.append(WaypointRow(int(row), tuple(float(c) for c in (starts + stops) / 2.0)))
    return waypoints


def split_left_right(waypoints: List[WaypointRow], n_branches: int = 2) -> Tuple[WaypointPath, ...]:
    """
    Assign waypoint centers to one path per branch.

    With two branches, rows holding two or more centers give their minimum to
    Left and their maximum to Right. Below the lowest such row, single centers
    belong to both paths (the trunk). Above it, a single center joins the path
    whose latest coordinate is horizontally nearer; an empty path counts as
    infinitely far and ties go Left. Without any multi-center row the whole
    mask is treated as trunk.

    With one branch every single center is kept and a multi-center row
    contributes the center nearest the previous point.

    Raises:
        NoBranchDetected: If there are no waypoints.
        ShapeError: If n_branches is not 1 or 2.
    """
    if not waypoints:
        raise NoBranchDetected("no waypoints to split")
    if n_branches not in (1, 2):
        raise ShapeError(f"curve fitting supports 1 or 2 branches, got {n_branches}")
    waypoints = sorted(waypoints, key=lambda w: w.row)

    if n_branches == 1:
        rows, cols = [], []
        for w in waypoints:
            center = w.centers[0]
            if len(w.centers) > 1 and cols:
                center = min(w.centers, key=lambda c: abs(c - cols[-1]))
            rows.append(w.row)
            cols.append(center)
        return (WaypointPath(rows, cols),)

    split_rows = [w.row for w in waypoints if len(w.centers) >= 2]
    last_split = max(split_rows) if split_rows else None
    left: Tuple[List[float], List[float]] = ([], [])
    right: Tuple[List[float], List[float]] = ([], [])
    for w in waypoints:
        if len(w.centers) >= 2:
            _append(left, w.row, w.centers[0])
            _append(right, w.row, w.centers[-1])
        elif last_split is None or w.row > last_split:
            _append(left, w.row, w.centers[0])
            _append(right, w.row, w.centers[0])
        else:
            center = w.centers[0]
            to_left = abs(center - left[1][-1]) if left[1] else np.inf
            to_right = abs(center - right[1][-1]) if right[1] else np.inf
            _append(left if to_left <= to_right else right, w.row, center)
    return WaypointPath(*left), WaypointPath(*right)


def fit_polynomial(path: WaypointPath, order: int = settings.POLY_ORDER) -> PolyCurve:
    """
    Least-squares polynomial x = f(row) on the normalized row axis.

    The order drops to (distinct rows - 1) when points are scarce. The system
    is solved through a QR factorization of the Vandermonde matrix.

    Raises:
        InsufficientPoints: If the path has fewer than two distinct rows.
        ValidationError: If order < 1.
    """
    if order < 1:
        raise ValidationError(f"polynomial order must be at least 1, got {order}")
    distinct = np.unique(path.rows).size
    if len(path) < 2 or distinct < 2:
        raise InsufficientPoints(f"need at least 2 distinct rows to fit a curve, got {distinct}")
    order = min(order, distinct - 1)

    curve = PolyCurve(
        coefficients=np.zeros(order + 1),
        order=order,
        row_min=float(path.rows.min()),
        row_max=float(path.rows.max()),
        residual_rms=0.0,
    )
    vander = P.polyvander(curve.normalize(path.rows), order)
    q, r = np.linalg.qr(vander)
    curve.coefficients = solve_triangular(r, q.T @ path.cols)
    curve.residual_rms = float(np.sqrt(np.mean((vander @ curve.coefficients - path.cols) ** 2)))
    return curve


class CurveFitter(ABC):
    """Strategy turning one waypoint path into a curve."""

    @abstractmethod
    def fit(self, path: WaypointPath) -> Curve:
        pass


class PolynomialFitter(CurveFitter):
    def __init__(self, order: int = settings.POLY_ORDER):
        self.order = order

    def fit(self, path: WaypointPath) -> Curve:
        return fit_polynomial(path, self.order)


class CubicSplineFitter(CurveFitter):
    """Natural cubic spline through the path; interpolates, so the residual is zero."""

    def fit(self, path: WaypointPath) -> Curve:
        if len(path) < 2:
            raise InsufficientPoints("need at least 2 points to fit a spline")
        spline = CubicSpline(path.rows, path.cols, bc_type="natural")
        return SplineCurve(spline, float(path.rows.min()), float(path.rows.max()))


class CurveFitting:
    """Registry of curve-fitting strategies."""

    strategies = {
        CurveMethod.POLYNOMIAL: PolynomialFitter,
        CurveMethod.CUBIC_SPLINE: CubicSplineFitter,
    }

    @classmethod
    def get_fitter(
        cls,
        method: Union[str, CurveMethod] = CurveMethod.POLYNOMIAL,
        order: int = settings.POLY_ORDER,
    ) -> CurveFitter:
        """
        Build the fitter for ``method``. ``order`` only applies to polynomials.

        Raises:
            ValueError: If the method is not registered.
        """
        try:
            method = CurveMethod(method)
        except ValueError:
            raise ValueError(
                f"Unknown curve fitting method: {method}. Choose from {[m.value for m in cls.strategies]}"
            ) from None
        if method is CurveMethod.POLYNOMIAL:
            return PolynomialFitter(order=order)
        return cls.strategies[method]()


@dataclass
class FitResult:
    """Positions produced from one mask together with fit diagnostics."""
    target: PositionTarget
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def fit_mask(
    mask: np.ndarray,
    n_branches: int = 2,
    *,
    min_area: int = settings.BLOB_MIN_AREA,
    order: int = settings.POLY_ORDER,
    method: Union[str, CurveMethod] = CurveMethod.POLYNOMIAL,
) -> FitResult:
    """
    Full curve-fitting pipeline on one binary mask.

    Each curve is evaluated at every row of its path's span and clamped to
    [0, width - 1]; rows outside every span stay invalid. A path of a single
    point yields that one row.

    Raises:
        NoBranchDetected: If nothing survives blob filtering.
    """
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    _, sizes = label_components(mask)
    filtered = blob_filter(mask, min_area)
    removed = int(np.count_nonzero((sizes[1:] > 0) & (sizes[1:] < min_area)))

    waypoints = extract_waypoints(filtered)
    paths = split_left_right(waypoints, n_branches)
    fitter = CurveFitting.get_fitter(method, order)

    coords = np.zeros((n_branches, height))
    valid = np.zeros((n_branches, height), dtype=bool)
    path_info = []
    for b, path in enumerate(paths):
        first, last = path.span
        rows = np.arange(first, last + 1)
        if np.unique(path.rows).size < 2:
            values = np.full(rows.shape, float(path.cols[0]))
            info: Dict[str, Any] = {"kind": "single_point"}
        else:
            curve = fitter.fit(path)
            values = curve.evaluate(rows)
            info = curve.diagnostics()
        coords[b, rows] = np.clip(values, 0.0, width - 1.0)
        valid[b, rows] = True
        path_info.append({**info, "points": len(path), "span": [first, last]})

    diagnostics = {
        "method": CurveMethod(method).value,
        "filtered_blobs": removed,
        "waypoint_rows": len(waypoints),
        "paths": path_info,
    }
    logger.debug("Fitted %s paths (%s blobs filtered)", len(paths), removed)
    return FitResult(PositionTarget(coords, valid, width, height), diagnostics)


def mask_to_positions(
    mask: np.ndarray,
    n_branches: int = 2,
    height: Optional[int] = None,
    *,
    min_area: int = settings.BLOB_MIN_AREA,
    order: int = settings.POLY_ORDER,
    method: Union[str, CurveMethod] = CurveMethod.POLYNOMIAL,
) -> PositionTarget:
    """
    Composition of blob_filter, extract_waypoints, split_left_right and
    per-path curve fitting.

    Raises:
        NoBranchDetected: If the mask holds no branch.
        ShapeError: If ``height`` is given and differs from the mask.
    """
    mask = np.asarray(mask, dtype=bool)
    if height is not None and mask.shape[0] != height:
        raise ShapeError(f"mask has {mask.shape[0]} rows, expected {height}")
    return fit_mask(mask, n_branches, min_area=min_area, order=order, method=method).target


def _append(path: Tuple[List[float], List[float]], row: int, col: float) -> None:
    path[0].append(row)
    path[1].append(col)
