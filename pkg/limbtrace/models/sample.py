from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from limbtrace.models.target import PositionTarget


@dataclass
class Sample:
    """
    One dataset entry as consumed by training and evaluation.

    Attributes:
        sample_id: Stable identifier from the manifest.
        image: uint8 array (H, W, C).
        target: Centerline labels in the row-scan frame.
        whole_mask: Every branch pixel, occluded or not.
        visible_mask: Unoccluded branch pixels.
        occlusion_fraction: Share of branch pixels hidden by occluders.
        condition: Occlusion regime name, the report's condition key.
        meta: Remaining meta.json content (seed, scene features, ...).
    """
    sample_id: str
    image: np.ndarray
    target: PositionTarget
    whole_mask: Optional[np.ndarray] = None
    visible_mask: Optional[np.ndarray] = None
    occlusion_fraction: float = 0.0
    condition: str = "none"
    meta: Dict[str, Any] = field(default_factory=dict)
