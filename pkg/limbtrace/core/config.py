"""
Process-wide settings management.

This module centralizes the defaults shared by every limbtrace command.
It uses pydantic-settings to load overrides from environment variables
and/or a .env file, providing type validation and a single source of truth
for the constants the branch-position experiments depend on.

Per-run choices (paths, seeds, model sizes) live in ``RunConfig``
(see ``limbtrace.schemas.config``); the values here only seed its defaults.
"""

from typing import Annotated, List, Tuple, Union

from pydantic import field_validator
from pydantic_settings import BaseSettings, NoDecode

# Widths arrive from the environment as "2048,512"; NoDecode hands the raw
# string to the validator instead of attempting JSON.
LayerWidths = Annotated[Tuple[int, ...], NoDecode]


class Settings(BaseSettings):
    """
    Main limbtrace settings class.

    Attributes:
        PROJECT_NAME (str): The name of the project.
        VERSION (str): The current version of the package.
        LOG_LEVEL (str): Root logging level used by the CLI.
        TORCH_THREADS (int): Intra-op threads for torch. 1 keeps training
                             trajectories bit-identical between runs.
        CHECKPOINT_VERSION (int): Format version written into checkpoints.

        BLOB_MIN_AREA (int): Components smaller than this are removed from
                             segmentation masks before waypoint extraction.
        POLY_ORDER (int): Default polynomial order of the curve fitter.
        BATCH_SIZE (int): Default minibatch size for both networks.
        DENSE_UNITS (Tuple[int, ...]): Widths of the regressor's hidden dense layers.
                                       Accepts "2048,512" from the environment.
        BACKBONE_CHANNELS (Tuple[int, ...]): Output channels of the stride-2 conv blocks.
        SEG_CHANNELS (Tuple[int, ...]): Encoder widths of the segmentation network.
        SEG_THRESHOLD (float): Probability threshold for binary masks.
        CROP_RATIO (float): Side of the square crop relative to image height.
        CV_GROUPS (int): Number of cross-validation groups.
        WORST_RMSE_PX (float): Predictions above this RMSE are exported for tagging.
        OCCLUSION_BUCKET_WIDTH (float): Width of the occlusion buckets in reports.
    """
    PROJECT_NAME: str = "limbtrace"
    VERSION: str = "0.1.0"
    LOG_LEVEL: str = "INFO"
    TORCH_THREADS: int = 1
    CHECKPOINT_VERSION: int = 1

    # Curve-fitting baseline
    BLOB_MIN_AREA: int = 65
    POLY_ORDER: int = 5
    SEG_THRESHOLD: float = 0.5

    # Networks and training
    BATCH_SIZE: int = 8
    DENSE_UNITS: LayerWidths = (2048, 512)
    BACKBONE_CHANNELS: LayerWidths = (16, 32, 64, 128)
    SEG_CHANNELS: LayerWidths = (16, 32, 64)

    # Dataset construction
    CROP_RATIO: float = 0.8
    CV_GROUPS: int = 5

    # Evaluation
    WORST_RMSE_PX: float = 4.0
    OCCLUSION_BUCKET_WIDTH: float = 0.05

    @field_validator("DENSE_UNITS", "BACKBONE_CHANNELS", "SEG_CHANNELS", mode="before")
    def assemble_widths(cls, v: Union[str, List[int], Tuple[int, ...]]) -> Union[List[int], Tuple[int, ...]]:
        """
        Allow a comma-separated string of layer widths from the environment.

        ``DENSE_UNITS=2048,512`` becomes ``(2048, 512)``; JSON lists and
        tuples are handed to pydantic unchanged.
        """
        if isinstance(v, str) and not v.startswith("["):
            return [int(i.strip()) for i in v.split(",") if i.strip()]
        elif isinstance(v, (list, tuple, str)):
            return v
        raise ValueError(v)

    class Config:
        """Pydantic model configuration."""
        env_file = ".env"
        case_sensitive = True


# Instantiate the settings object to be used throughout the package
settings = Settings()
