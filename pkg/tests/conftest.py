import numpy as np
import pytest
import torch

from limbtrace.models.sample import Sample
from limbtrace.models.scene import OcclusionRegime, TreeKind
from limbtrace.models.target import PositionTarget
from limbtrace.schemas.config import ModelSpec, SegSpec, TrainConfig
from limbtrace.services.synthdata import generate_scene, rasterize

torch.set_num_threads(1)


def bundle_sample(kind=TreeKind.Y_SHAPED, regime=OcclusionRegime.NONE, seed=0, size=32, sample_id=None):
    scene = generate_scene(kind, (size, size), regime, seed)
    bundle = rasterize(scene)
    return Sample(
        sample_id=sample_id or f"{kind.value}-{regime.value}-{seed}",
        image=bundle.image,
        target=bundle.target,
        whole_mask=bundle.whole_mask,
        visible_mask=bundle.visible_mask,
        occlusion_fraction=bundle.occlusion_fraction,
        condition=regime.value,
        meta={"features": bundle.features.to_dict()},
    )


def vertical_target(columns, height=32, width=32):
    coords = np.tile(np.asarray(columns, dtype=float)[:, None], (1, height))
    return PositionTarget(coords, np.ones_like(coords, dtype=bool), width, height)


@pytest.fixture
def y_sample():
    return bundle_sample(TreeKind.Y_SHAPED, OcclusionRegime.NONE, seed=3)


@pytest.fixture
def small_spec():
    return ModelSpec(
        channels=3, height=32, width=32, backbone_channels=(4, 8), dense_units=(32, 16), n_branches=2, seed=5
    )


@pytest.fixture
def tiny_spec():
    return ModelSpec(
        channels=1, height=16, width=16, backbone_channels=(2, 4), dense_units=(8,), n_branches=2, seed=1
    )


@pytest.fixture
def seg_spec():
    return SegSpec(channels=3, height=32, width=32, encoder_channels=(4, 8), seed=2)


@pytest.fixture
def quick_train():
    return TrainConfig(epochs=3, batch_size=4, learning_rate=1e-3, seed=0, validation_fraction=0.0)
