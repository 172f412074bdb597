"""Waypoints and fitted centerline curves produced by the curve-fitting baseline."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import CubicSpline


class CurveMethod(str, Enum):
    """Curve fitted to each waypoint path."""
    POLYNOMIAL = "polynomial"
    CUBIC_SPLINE = "cubic_spline"


@dataclass(frozen=True)
class WaypointRow:
    """Centers of the foreground runs found on one mask row, sorted ascending."""
    row: int
    centers: Tuple[float, ...]


@dataclass
class WaypointPath:
    """Ordered (row, column) samples assigned to one branch."""
    rows: np.ndarray
    cols: np.ndarray

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.cols = np.asarray(self.cols, dtype=np.float64)

    def __len__(self) -> int:
        return int(self.rows.size)

    @property
    def span(self) -> Tuple[int, int]:
        """First and last row covered by the path."""
        return int(self.rows.min()), int(self.rows.max())


class Curve(ABC):
    """A fitted centerline x = f(row)."""

    @abstractmethod
    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        """Column position at each requested row."""
        pass

    @abstractmethod
    def diagnostics(self) -> Dict[str, Any]:
        pass


@dataclass
class PolyCurve(Curve):
    """
    Least-squares polynomial x = sum_j a_j * yhat**j.

    yhat maps the fitted row range [row_min, row_max] affinely onto [-1, 1],
    which keeps the Vandermonde matrix well conditioned at order 5.
    """
    coefficients: np.ndarray
    order: int
    row_min: float
    row_max: float
    residual_rms: float

    def normalize(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        half = (self.row_max - self.row_min) / 2.0
        middle = (self.row_max + self.row_min) / 2.0
        if half == 0.0:
            return rows - middle
        return (rows - middle) / half

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        return P.polyval(self.normalize(rows), self.coefficients)

    def diagnostics(self) -> Dict[str, Any]:
        return {"kind": "polynomial", "order": self.order, "residual_rms": self.residual_rms}


@dataclass
class SplineCurve(Curve):
    """Natural cubic spline through the waypoints; held constant beyond the fitted rows."""
    spline: CubicSpline
    row_min: float
    row_max: float
    residual_rms: float = 0.0

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        rows = np.clip(np.asarray(rows, dtype=np.float64), self.row_min, self.row_max)
        return self.spline(rows)

    def diagnostics(self) -> Dict[str, Any]:
        return {"kind": "cubic_spline", "knots": int(self.spline.x.size), "residual_rms": self.residual_rms}
