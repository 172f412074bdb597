"""
Procedural scene geometry and its rasterized form.

Geometry is kept in pixel units with points stored as (x, y) = (column, row);
the pixel at row r, column c has its center at (c, r).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from limbtrace.models.target import PositionTarget, ScanAxis


class TreeKind(str, Enum):
    """Supported 2D tree structures."""
    Y_SHAPED = "y_shaped"
    TRUNK_ONLY = "trunk_only"
    HORIZONTAL_VINE = "horizontal_vine"

    @property
    def scan_axis(self) -> ScanAxis:
        return ScanAxis.COLUMNS if self is TreeKind.HORIZONTAL_VINE else ScanAxis.ROWS

    @property
    def n_branches(self) -> int:
        return 2 if self is TreeKind.Y_SHAPED else 1


class OcclusionRegime(str, Enum):
    """Occlusion levels calibrated to leafless, post-harvest and harvest-season trees."""
    NONE = "none"
    MEDIUM = "medium"
    HEAVY = "heavy"

    @property
    def statistics(self) -> Tuple[float, float]:
        """(mean, std) of the occluded branch fraction."""
        return {
            OcclusionRegime.NONE: (0.0, 0.0),
            OcclusionRegime.MEDIUM: (0.14, 0.15),
            OcclusionRegime.HEAVY: (0.36, 0.09),
        }[self]


class OccluderShape(str, Enum):
    DISK = "disk"
    ELLIPSE = "ellipse"
    LEAF_BLOB = "leaf_blob"


@dataclass(frozen=True)
class Occluder:
    """
    A fruit or foliage shape painted over the tree.

    Attributes:
        shape: Disk (fruit), ellipse or leaf blob (foliage).
        center: (x, y) in pixels.
        size: Radius, or semi-major axis for ellipses and leaves (pixels, > 0).
        color: RGB colour.
        aspect: Minor/major axis ratio for ellipses.
        angle: Orientation in radians for ellipses and leaves.
    """
    shape: OccluderShape
    center: Tuple[float, float]
    size: float
    color: Tuple[int, int, int]
    aspect: float = 1.0
    angle: float = 0.0

    def __post_init__(self) -> None:
        if not self.size > 0:
            raise ValueError(f"Occluder size must be positive, got {self.size}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "shape": OccluderShape(self.shape).value,
            "center": [float(v) for v in self.center],
            "size": float(self.size),
            "color": [int(v) for v in self.color],
            "aspect": float(self.aspect),
            "angle": float(self.angle),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Occluder":
        return cls(
            shape=OccluderShape(data["shape"]),
            center=tuple(data["center"]),
            size=data["size"],
            color=tuple(data["color"]),
            aspect=data.get("aspect", 1.0),
            angle=data.get("angle", 0.0),
        )


@dataclass(frozen=True)
class TreeScene:
    """
    Ground-truth geometry of one synthetic tree before rasterization.

    Attributes:
        kind: Tree structure.
        branches: One (k, 2) float array of (x, y) vertices per branch, strictly
                  increasing along the scan axis.
        thickness: Per-vertex stroke radius (pixels, >= 1) for each branch.
        merge_row: Row where the two branches of a Y-shaped tree join.
        occluders: Shapes painted over the tree.
        canvas: (width, height) in pixels.
        seed: Seed the scene was generated from.
        regime: Occlusion regime the occluders were calibrated to.
    """
    kind: TreeKind
    branches: Tuple[np.ndarray, ...]
    thickness: Tuple[np.ndarray, ...]
    merge_row: Optional[int]
    occluders: Tuple[Occluder, ...]
    canvas: Tuple[int, int]
    seed: int
    regime: OcclusionRegime = OcclusionRegime.NONE

    @property
    def width(self) -> int:
        return self.canvas[0]

    @property
    def height(self) -> int:
        return self.canvas[1]

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready geometry dump (scene.json)."""
        return {
            "kind": self.kind.value,
            "branches": [b.tolist() for b in self.branches],
            "thickness": [t.tolist() for t in self.thickness],
            "merge_row": self.merge_row,
            "occluders": [o.to_dict() for o in self.occluders],
            "canvas": list(self.canvas),
            "seed": int(self.seed),
            "regime": self.regime.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TreeScene":
        return cls(
            kind=TreeKind(data["kind"]),
            branches=tuple(np.asarray(b, dtype=np.float64) for b in data["branches"]),
            thickness=tuple(np.asarray(t, dtype=np.float64) for t in data["thickness"]),
            merge_row=data.get("merge_row"),
            occluders=tuple(Occluder.from_dict(o) for o in data.get("occluders", [])),
            canvas=tuple(data["canvas"]),
            seed=int(data["seed"]),
            regime=OcclusionRegime(data.get("regime", "none")),
        )


@dataclass(frozen=True)
class SceneFeatures:
    """Geometry descriptors used to tag large-error predictions."""
    min_radius: float
    max_bend_deg: float
    trunk_lean_deg: float
    merge_fraction: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "min_radius": self.min_radius,
            "max_bend_deg": self.max_bend_deg,
            "trunk_lean_deg": self.trunk_lean_deg,
            "merge_fraction": self.merge_fraction,
        }


@dataclass
class SceneBundle:
    """
    Rasterized scene with its annotations.

    Attributes:
        image: uint8 array (H, W, 3), or (H, W, 4) when a depth channel is rendered.
        whole_mask: Bool array (H, W) of every branch pixel, occluded or not.
        visible_mask: Bool array (H, W), whole_mask minus occluder pixels.
        target: Exact centerline coordinates per scan line.
        occlusion_fraction: 1 - |visible| / |whole|.
    """
    image: np.ndarray
    whole_mask: np.ndarray
    visible_mask: np.ndarray
    target: PositionTarget
    occlusion_fraction: float
    features: Optional[SceneFeatures] = field(default=None)
