"""
Regression labels: per-scan-line branch coordinates and split assignments.

A ``PositionTarget`` stores, for every branch channel and every scan line
(image row for vertical trees, image column for horizontal vines), the
cross-axis coordinate of the branch centerline in pixels. Invalid entries
hold 0.0 so that masked arithmetic never meets a NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List

import numpy as np
import pandas as pd

from limbtrace.core.exceptions import ShapeError, ValidationError


class ScanAxis(str, Enum):
    """Direction the target is scanned along."""
    ROWS = "rows"
    COLUMNS = "columns"


class CropAnchor(str, Enum):
    """Vertical placement of a square crop window."""
    TOP = "top"
    CENTER = "center"
    BOTTOM = "bottom"


@dataclass
class PositionTarget:
    """
    n_branches x length grid of real-valued branch coordinates.

    Attributes:
        coords: Float array (n_branches, length) of cross-axis coordinates.
        valid: Bool array (n_branches, length); False where a branch does
               not cross the scan line.
        width: Canvas width in pixels.
        height: Canvas height in pixels.
        axis: Scan axis. ROWS means one horizontal coordinate per row.
    """
    coords: np.ndarray
    valid: np.ndarray
    width: int
    height: int
    axis: ScanAxis = ScanAxis.ROWS

    def __post_init__(self) -> None:
        self.axis = ScanAxis(self.axis)
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))
        self.valid = np.atleast_2d(np.asarray(self.valid, dtype=bool))
        if self.valid.shape != self.coords.shape:
            raise ShapeError(f"valid mask {self.valid.shape} does not match coords {self.coords.shape}")
        if self.coords.shape[1] != self.length:
            raise ShapeError(
                f"target length {self.coords.shape[1]} does not match the {self.axis.value} scan length {self.length}"
            )
        self.coords = np.where(self.valid, self.coords, 0.0)

    @property
    def n_branches(self) -> int:
        return self.coords.shape[0]

    @property
    def length(self) -> int:
        """Number of scan lines."""
        return self.height if self.axis is ScanAxis.ROWS else self.width

    @property
    def extent(self) -> int:
        """Size of the cross axis, i.e. the coordinate range is [0, extent - 1]."""
        return self.width if self.axis is ScanAxis.ROWS else self.height

    @property
    def row_valid(self) -> np.ndarray:
        """Scan lines where at least one branch is defined."""
        return self.valid.any(axis=0)

    def normalized(self) -> np.ndarray:
        """Coordinates divided by (extent - 1), the regression label scale."""
        return self.coords / float(self.extent - 1)

    @classmethod
    def from_normalized(
        cls,
        values: np.ndarray,
        width: int,
        height: int,
        axis: ScanAxis = ScanAxis.ROWS,
    ) -> "PositionTarget":
        """Denormalize a network output, clamp it to the canvas and mark every entry valid."""
        values = np.nan_to_num(np.asarray(values, dtype=np.float64), nan=0.5)
        extent = width if ScanAxis(axis) is ScanAxis.ROWS else height
        coords = np.clip(values * (extent - 1), 0.0, extent - 1)
        return cls(coords=coords, valid=np.ones_like(coords, dtype=bool), width=width, height=height, axis=axis)

    def copy(self) -> "PositionTarget":
        return PositionTarget(self.coords.copy(), self.valid.copy(), self.width, self.height, self.axis)

    def transpose(self) -> "PositionTarget":
        """The same labels seen on the transposed image (rows and columns swapped)."""
        axis = ScanAxis.COLUMNS if self.axis is ScanAxis.ROWS else ScanAxis.ROWS
        return PositionTarget(self.coords.copy(), self.valid.copy(), self.height, self.width, axis)

    def invariant_violations(self, merge_line: int | None = None) -> List[str]:
        """
        List every broken label invariant (empty when the target is well formed).

        Checks the coordinate range, contiguity of valid runs and, when a
        merge line is given, equality of all channels from it onward.
        """
        problems = []
        upper = self.extent - 1
        inside = (self.coords >= 0.0) & (self.coords <= upper)
        if np.any(self.valid & ~inside):
            problems.append(f"valid coordinates outside [0, {upper}]")
        for b in range(self.n_branches):
            if _run_count(self.valid[b]) > 1:
                problems.append(f"branch {b} has more than one valid run")
        if merge_line is not None and self.n_branches > 1:
            tail = slice(merge_line, None)
            both = self.valid[:, tail].all(axis=0)
            spread = np.ptp(self.coords[:, tail], axis=0)
            if np.any(spread[both] != 0.0):
                problems.append(f"channels differ at or after merge line {merge_line}")
        return problems

    def to_frame(self) -> pd.DataFrame:
        """Tabular form used by target.csv: one row per scan line, NaN where a branch is invalid."""
        data: Dict[str, np.ndarray] = {"row_index": np.arange(self.length)}
        for b in range(self.n_branches):
            data[f"branch_{b}_x"] = np.where(self.valid[b], self.coords[b], np.nan)
        data["valid_flag"] = self.row_valid.astype(int)
        return pd.DataFrame(data)

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        width: int,
        height: int,
        axis: ScanAxis = ScanAxis.ROWS,
    ) -> "PositionTarget":
        columns = sorted(
            (c for c in frame.columns if c.startswith("branch_") and c.endswith("_x")),
            key=lambda c: int(c.split("_")[1]),
        )
        values = frame.sort_values("row_index")[columns].to_numpy(dtype=np.float64).T
        valid = ~np.isnan(values)
        return cls(coords=np.nan_to_num(values), valid=valid, width=width, height=height, axis=axis)


@dataclass
class SplitAssignment:
    """Cross-validation group (1..k) of every sample id."""
    groups: Dict[str, int]
    k: int
    seed: int = 0
    _members: Dict[int, List[str]] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        self._members = {g: [] for g in range(1, self.k + 1)}
        for sample_id, group in self.groups.items():
            if group not in self._members:
                raise ValidationError(f"sample {sample_id} is assigned to group {group}, outside 1..{self.k}")
            self._members[group].append(sample_id)

    def group_of(self, sample_id: str) -> int:
        return self.groups[sample_id]

    def members(self, group: int) -> List[str]:
        return list(self._members.get(group, []))

    def sizes(self) -> Dict[int, int]:
        return {g: len(ids) for g, ids in self._members.items()}

    def training_ids(self, held_out: int) -> List[str]:
        """Samples of every group except the held-out one, in manifest order."""
        return [sample_id for sample_id, group in self.groups.items() if group != held_out]


def _run_count(mask: np.ndarray) -> int:
    """Number of maximal True runs in a 1-D boolean array."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    return int(np.count_nonzero(np.diff(padded) == 1))


def longest_run(mask: np.ndarray) -> np.ndarray:
    """Keep only the longest True run of a 1-D boolean array (first one on ties)."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    result = np.zeros_like(mask, dtype=bool)
    if starts.size == 0:
        return result
    best = int(np.argmax(stops - starts))
    result[starts[best]:stops[best]] = True
    return result
