"""Pydantic schemas for the on-disk dataset manifest and per-sample metadata."""

from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from limbtrace.models.scene import OcclusionRegime, TreeKind
from limbtrace.models.target import CropAnchor, SplitAssignment


class SampleMeta(BaseModel):
    """Content of meta.json and one manifest entry."""

    sample_id: str
    seed: int
    kind: TreeKind
    regime: OcclusionRegime
    occlusion_fraction: float = Field(..., ge=0, le=1)
    canvas: Tuple[int, int] = Field(..., description="(width, height) in pixels.")
    cv_group: int = Field(..., ge=1)
    features: Dict[str, Optional[float]] = Field(default_factory=dict)
    parent_id: Optional[str] = Field(None, description="Rendered scene a crop was cut from.")
    crop: Optional[CropAnchor] = Field(None, description="Anchor of the crop window, None for a full render.")


class Manifest(BaseModel):
    """Dataset index: generation parameters, samples and their split."""

    version: int = 1
    kind: TreeKind
    canvas: Tuple[int, int]
    with_depth: bool = False
    crop_ratio: Optional[float] = Field(None, description="Window side of the crop augmentation, None without crops.")
    k_folds: int
    data_seed: int
    split_seed: int
    samples: List[SampleMeta]

    def split(self) -> SplitAssignment:
        return SplitAssignment(
            {s.sample_id: s.cv_group for s in self.samples}, k=self.k_folds, seed=self.split_seed
        )

    def sample(self, sample_id: str) -> SampleMeta:
        for meta in self.samples:
            if meta.sample_id == sample_id:
                return meta
        raise KeyError(sample_id)
