"""
Pydantic schemas for run configuration and network specifications.

A run is described by a single JSON file validated into ``RunConfig``.
Command-line flags only override a handful of fields (seed, held-out group,
output location); everything else, including every seed, is explicit in the
file or in the defaults below.
"""

from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from limbtrace.core.config import settings
from limbtrace.core.exceptions import SpecMismatch
from limbtrace.models.curves import CurveMethod
from limbtrace.models.scene import OcclusionRegime, TreeKind


def _downsampled(size: int, blocks: int) -> int:
    """Spatial size after ``blocks`` 3x3 stride-2 convolutions with padding 1."""
    for _ in range(blocks):
        size = (size - 1) // 2 + 1
    return size


class ModelSpec(BaseModel):
    """
    Layer configuration of the branch-position regressor.

    A stack of 3x3 stride-2 conv blocks (ReLU) feeds a flatten, the hidden
    dense layers (ReLU) and a linear head of n_branches x height units.
    """

    channels: int = Field(3, description="Input channels (3 for RGB, 4 with depth).")
    height: int = Field(64, description="Input height in pixels; also the number of regressed rows.")
    width: int = Field(64, description="Input width in pixels.")
    backbone_channels: Tuple[int, ...] = Field(
        default=settings.BACKBONE_CHANNELS,
        description="Output channels of each stride-2 conv block. Empty for a linear-only model.",
    )
    dense_units: Tuple[int, ...] = Field(
        default=settings.DENSE_UNITS,
        description="Widths of the hidden dense layers.",
    )
    n_branches: int = Field(2, description="Branch channels regressed per row.")
    head_units: Optional[int] = Field(
        None, description="Explicit head width; must equal n_branches x height when given."
    )
    conv_bias: bool = Field(True, description="Whether conv blocks carry a bias term.")
    seed: int = Field(0, description="Initialization seed.")

    model_config = ConfigDict(frozen=True)

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    @property
    def output_units(self) -> int:
        return self.n_branches * self.height

    def feature_shape(self) -> Tuple[int, int, int]:
        """Backbone output shape (channels, height, width) before flattening."""
        blocks = len(self.backbone_channels)
        if blocks == 0:
            return self.input_shape
        return (
            self.backbone_channels[-1],
            _downsampled(self.height, blocks),
            _downsampled(self.width, blocks),
        )

    def check(self) -> None:
        """Raise SpecMismatch when the configuration cannot describe a network."""
        sizes = (self.channels, self.height, self.width, self.n_branches)
        if any(v < 1 for v in sizes):
            raise SpecMismatch(f"input/branch sizes must be positive, got {sizes}")
        widths = tuple(self.backbone_channels) + tuple(self.dense_units)
        if any(w < 1 for w in widths):
            raise SpecMismatch(f"layer widths must be positive, got {widths}")
        if self.head_units is not None and self.head_units != self.output_units:
            raise SpecMismatch(
                f"head has {self.head_units} units but n_branches x height = {self.output_units}"
            )


class SegVariant(str, Enum):
    """Which mask the segmentation baseline learns."""
    VISIBLE = "visible"
    WHOLE = "whole"


class SegSpec(BaseModel):
    """Encoder-decoder segmentation network with skip concatenation and a sigmoid output."""

    channels: int = Field(3, description="Input channels.")
    height: int = Field(64, description="Input height; must be divisible by 2**depth.")
    width: int = Field(64, description="Input width; must be divisible by 2**depth.")
    encoder_channels: Tuple[int, ...] = Field(
        default=settings.SEG_CHANNELS,
        description="Width of each down-stage; the decoder mirrors it.",
    )
    bottleneck_channels: Optional[int] = Field(None, description="Defaults to twice the last encoder width.")
    variant: SegVariant = Field(SegVariant.VISIBLE, description="Target mask the network is trained on.")
    seed: int = Field(0, description="Initialization seed.")

    model_config = ConfigDict(frozen=True)

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    @property
    def bottleneck(self) -> int:
        return self.bottleneck_channels or 2 * self.encoder_channels[-1]

    def check(self) -> None:
        if self.depth < 1:
            raise SpecMismatch("segmentation network needs at least one encoder stage")
        widths = tuple(self.encoder_channels) + (self.bottleneck, self.channels)
        if any(w < 1 for w in widths):
            raise SpecMismatch(f"layer widths must be positive, got {widths}")
        factor = 2 ** self.depth
        if self.height % factor or self.width % factor:
            raise SpecMismatch(
                f"input {self.height}x{self.width} is not divisible by 2**{self.depth} = {factor}"
            )


class TrainConfig(BaseModel):
    """Optimizer and loop settings shared by both networks."""

    batch_size: int = Field(default=settings.BATCH_SIZE, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    epochs: int = Field(30, ge=1)
    hflip: bool = Field(True, description="Mirror each sample with probability 0.5.")
    seed: int = Field(0, description="Shuffle and augmentation seed.")
    validation_fraction: float = Field(
        0.1, ge=0, lt=1, description="Share of the training groups held back for model selection."
    )


class SceneConfig(BaseModel):
    """Synthetic dataset parameters."""

    count: int = Field(700, ge=1, description="Number of scenes to generate.")
    kind: TreeKind = TreeKind.Y_SHAPED
    width: int = Field(64, ge=32)
    height: int = Field(64, ge=32)
    regime_mix: Dict[OcclusionRegime, float] = Field(
        default_factory=lambda: {
            OcclusionRegime.NONE: 0.5,
            OcclusionRegime.MEDIUM: 0.25,
            OcclusionRegime.HEAVY: 0.25,
        },
        description="Share of scenes per occlusion regime.",
    )
    with_depth: bool = Field(False, description="Render a synthetic depth channel as a fourth channel.")
    crop_augment: bool = Field(
        False, description="Replace each render by its top, center and bottom square crops."
    )
    crop_ratio: float = Field(default=settings.CROP_RATIO, gt=0, le=1, description="Crop side relative to the height.")

    @field_validator("regime_mix")
    def validate_mix(cls, v: Dict[OcclusionRegime, float]) -> Dict[OcclusionRegime, float]:
        """Shares must be non-negative and sum to one."""
        if any(share < 0 for share in v.values()):
            raise ValueError("regime shares cannot be negative")
        if abs(sum(v.values()) - 1.0) > 1e-6:
            raise ValueError(f"regime shares must sum to 1, got {sum(v.values())}")
        return v

    @model_validator(mode="after")
    def check_crop_window(self) -> "SceneConfig":
        """Crops are cut in the row frame and must fit its width."""
        height, width = self.frame_size
        if self.crop_augment and round(self.crop_ratio * height) > width:
            raise ValueError(
                f"crop side {round(self.crop_ratio * height)} exceeds the {width} px wide row frame"
            )
        return self

    @property
    def channels(self) -> int:
        return 4 if self.with_depth else 3

    @property
    def frame_size(self) -> Tuple[int, int]:
        """(height, width) seen by the networks; horizontal vines are transposed to scan rows."""
        if self.kind is TreeKind.HORIZONTAL_VINE:
            return (self.width, self.height)
        return (self.height, self.width)


class PathsConfig(BaseModel):
    dataset_root: Path = Path("runs/dataset")
    checkpoint_dir: Path = Path("runs/checkpoints")
    report_dir: Path = Path("runs/reports")


class SeedsConfig(BaseModel):
    """Every source of randomness, named."""

    data: int = 7
    split: int = 11
    train: int = 13
    init: int = 17

    @classmethod
    def from_base(cls, seed: int) -> "SeedsConfig":
        """Derive all named seeds from a single --seed value."""
        return cls(data=seed, split=seed + 1, train=seed + 2, init=seed + 3)


class EvaluationConfig(BaseModel):
    threshold: float = Field(default=settings.SEG_THRESHOLD, gt=0, lt=1)
    blob_min_area: int = Field(default=settings.BLOB_MIN_AREA, ge=0)
    poly_order: int = Field(default=settings.POLY_ORDER, ge=1)
    curve_method: CurveMethod = Field(CurveMethod.POLYNOMIAL, description="Curve fitted to each waypoint path.")
    strict_coverage: bool = Field(False, description="Raise CoverageGap instead of filling baseline gaps.")
    bucket_width: float = Field(default=settings.OCCLUSION_BUCKET_WIDTH, gt=0, le=1)
    worst_rmse_px: float = Field(default=settings.WORST_RMSE_PX, ge=0)


class ModelName(str, Enum):
    """Trainable models, as accepted by ``--model``."""
    HOB = "hob"
    SEG_VISIBLE = "seg_visible"
    SEG_WHOLE = "seg_whole"


class RunConfig(BaseModel):
    """Complete description of a reproducible run."""

    paths: PathsConfig = Field(default_factory=PathsConfig)
    scenes: SceneConfig = Field(default_factory=SceneConfig)
    seeds: SeedsConfig = Field(default_factory=SeedsConfig)
    k_folds: int = Field(default=settings.CV_GROUPS, ge=2)
    cv_group: int = Field(1, ge=1, description="Held-out group used for evaluation.")
    regressor: ModelSpec = Field(default_factory=ModelSpec)
    segmenter: SegSpec = Field(default_factory=SegSpec)
    hob_training: TrainConfig = Field(default_factory=lambda: TrainConfig(epochs=90))
    seg_training: TrainConfig = Field(default_factory=lambda: TrainConfig(epochs=50))
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)

    @model_validator(mode="after")
    def check_group(self) -> "RunConfig":
        if self.cv_group > self.k_folds:
            raise ValueError(f"cv_group {self.cv_group} exceeds k_folds {self.k_folds}")
        return self

    @classmethod
    def from_file(cls, path: Optional[Path], overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """
        Load a JSON config file (or the defaults when path is None) and apply overrides.

        Recognised override keys are ``seed`` and ``cv_group``; ``None`` values
        are ignored so unset CLI flags keep the file values. A file that is not
        valid JSON surfaces as ``pydantic.ValidationError`` like any other
        malformed field.
        """
        config = cls.model_validate_json(Path(path).read_text()) if path else cls()
        data: Dict[str, Any] = config.model_dump()
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        if "seed" in overrides:
            data["seeds"] = SeedsConfig.from_base(int(overrides["seed"])).model_dump()
        if "cv_group" in overrides:
            data["cv_group"] = int(overrides["cv_group"])
        return cls.model_validate(data)

    def regressor_spec(self) -> ModelSpec:
        """Regressor spec with input geometry and seed taken from the scene settings."""
        return self.regressor.model_copy(
            update={
                "channels": self.scenes.channels,
                "height": self.scenes.frame_size[0],
                "width": self.scenes.frame_size[1],
                "n_branches": self.scenes.kind.n_branches,
                "seed": self.seeds.init,
            }
        )

    def segmenter_spec(self, variant: SegVariant) -> SegSpec:
        return self.segmenter.model_copy(
            update={
                "channels": self.scenes.channels,
                "height": self.scenes.frame_size[0],
                "width": self.scenes.frame_size[1],
                "variant": variant,
                "seed": self.seeds.init,
            }
        )

    def training_config(self, model: ModelName) -> TrainConfig:
        base = self.hob_training if model is ModelName.HOB else self.seg_training
        return base.model_copy(update={"seed": self.seeds.train})
