import numpy as np
import pytest
import torch

from limbtrace.core.exceptions import CheckpointError, DatasetError, MissingCheckpoint
from limbtrace.models.sample import Sample
from limbtrace.models.scene import OcclusionRegime, TreeKind
from limbtrace.models.state import TrainHistory
from limbtrace.models.target import CropAnchor, ScanAxis
from limbtrace.schemas.config import ModelName
from limbtrace.schemas.dataset import Manifest, SampleMeta
from limbtrace.services import dataset_io
from limbtrace.services.annotation import crop_sample
from limbtrace.services.checkpoint import (
    checkpoint_path,
    history_path,
    load_checkpoint,
    save_checkpoint,
    save_history,
)
from limbtrace.services.overlay import GT_COLOR, PREDICTION_COLOR, render_overlay
from limbtrace.services.regressor import build_model
from limbtrace.services.segbaseline import build_segmodel
from limbtrace.services.synthdata import generate_scene, rasterize
from tests.conftest import vertical_target


def write_one(root, kind=TreeKind.Y_SHAPED, sample_id="s00000", with_depth=False, canvas=(48, 32)):
    scene = generate_scene(kind, canvas, OcclusionRegime.HEAVY, 21)
    bundle = rasterize(scene, with_depth=with_depth)
    meta = SampleMeta(
        sample_id=sample_id,
        seed=21,
        kind=kind,
        regime=OcclusionRegime.HEAVY,
        occlusion_fraction=bundle.occlusion_fraction,
        canvas=scene.canvas,
        cv_group=1,
        features=bundle.features.to_dict(),
    )
    dataset_io.write_sample(root, meta, scene, bundle)
    return scene, bundle, meta


class TestDatasetIO:
    def test_sample_round_trip(self, tmp_path):
        scene, bundle, _ = write_one(tmp_path)
        sample = dataset_io.load_sample(tmp_path, "s00000")
        np.testing.assert_array_equal(sample.image, bundle.image)
        np.testing.assert_array_equal(sample.whole_mask, bundle.whole_mask)
        np.testing.assert_array_equal(sample.visible_mask, bundle.visible_mask)
        np.testing.assert_allclose(sample.target.coords, bundle.target.coords, atol=1e-9)
        np.testing.assert_array_equal(sample.target.valid, bundle.target.valid)
        assert sample.condition == "heavy"
        assert sample.occlusion_fraction == bundle.occlusion_fraction
        assert dataset_io.load_scene(tmp_path, "s00000").to_dict() == scene.to_dict()

    def test_depth_channel_round_trip(self, tmp_path):
        _, bundle, _ = write_one(tmp_path, with_depth=True)
        assert (tmp_path / "samples" / "s00000" / "depth.png").exists()
        np.testing.assert_array_equal(dataset_io.load_sample(tmp_path, "s00000").image, bundle.image)

    def test_vines_load_in_row_frame(self, tmp_path):
        _, bundle, _ = write_one(tmp_path, kind=TreeKind.HORIZONTAL_VINE)
        original = dataset_io.load_sample(tmp_path, "s00000", row_frame=False)
        turned = dataset_io.load_sample(tmp_path, "s00000")
        assert original.target.axis is ScanAxis.COLUMNS
        assert turned.target.axis is ScanAxis.ROWS
        assert turned.image.shape[:2] == (48, 32)
        np.testing.assert_allclose(turned.target.coords, bundle.target.coords, atol=1e-9)

    def test_manifest_round_trip(self, tmp_path):
        _, _, meta = write_one(tmp_path)
        manifest = Manifest(
            kind=TreeKind.Y_SHAPED, canvas=(48, 32), k_folds=2, data_seed=1, split_seed=2, samples=[meta]
        )
        dataset_io.write_manifest(tmp_path, manifest)
        loaded = dataset_io.load_manifest(tmp_path)
        assert loaded == manifest
        assert loaded.split().members(1) == ["s00000"]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError):
            dataset_io.load_manifest(tmp_path)

    def test_missing_sample(self, tmp_path):
        with pytest.raises(DatasetError):
            dataset_io.load_sample(tmp_path, "nope")

    def test_derived_sample_round_trip(self, tmp_path):
        scene = generate_scene(TreeKind.Y_SHAPED, (48, 32), OcclusionRegime.HEAVY, 21)
        bundle = rasterize(scene)
        parent = Sample("s00000", bundle.image, bundle.target, bundle.whole_mask, bundle.visible_mask)
        crop = crop_sample(parent, CropAnchor.BOTTOM)
        meta = SampleMeta(
            sample_id=crop.sample_id,
            seed=21,
            kind=TreeKind.Y_SHAPED,
            regime=OcclusionRegime.HEAVY,
            occlusion_fraction=0.0,
            canvas=scene.canvas,
            cv_group=1,
            parent_id="s00000",
            crop=CropAnchor.BOTTOM,
        )
        directory = dataset_io.write_derived(tmp_path, meta, crop)
        assert not (directory / "scene.json").exists()
        loaded = dataset_io.load_sample(tmp_path, "s00000_bottom")
        np.testing.assert_array_equal(loaded.image, crop.image)
        np.testing.assert_array_equal(loaded.whole_mask, crop.whole_mask)
        np.testing.assert_array_equal(loaded.target.valid, crop.target.valid)
        assert loaded.meta["parent_id"] == "s00000" and loaded.meta["crop"] == "bottom"
        with pytest.raises(DatasetError):
            dataset_io.load_scene(tmp_path, "s00000_bottom")


class TestCheckpoint:
    def test_regressor_round_trip(self, tmp_path, small_spec):
        state = build_model(small_spec)
        state.step = 7
        state.first_moments = {k: torch.full_like(v, 0.5) for k, v in state.first_moments.items()}
        path = save_checkpoint(state, checkpoint_path(tmp_path, ModelName.HOB, 2), ModelName.HOB)
        assert path.name == "hob_group2.pt"
        loaded = load_checkpoint(path, ModelName.HOB)
        assert loaded.spec == small_spec
        assert loaded.step == 7
        for name, p in state.parameters().items():
            assert torch.equal(p, loaded.parameters()[name])
            assert torch.equal(state.first_moments[name], loaded.first_moments[name])

    def test_segmenter_round_trip(self, tmp_path, seg_spec):
        state = build_segmodel(seg_spec)
        path = save_checkpoint(state, tmp_path / "seg.pt", ModelName.SEG_VISIBLE)
        loaded = load_checkpoint(path, ModelName.SEG_VISIBLE)
        assert loaded.spec == seg_spec
        assert loaded.parameter_count() == state.parameter_count()

    def test_missing(self, tmp_path):
        with pytest.raises(MissingCheckpoint) as info:
            load_checkpoint(tmp_path / "hob_group1.pt", ModelName.HOB)
        assert info.value.method == "hob"

    def test_wrong_model(self, tmp_path, small_spec):
        path = save_checkpoint(build_model(small_spec), tmp_path / "a.pt", ModelName.HOB)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, ModelName.SEG_WHOLE)

    def test_unsupported_version(self, tmp_path, small_spec):
        path = save_checkpoint(build_model(small_spec), tmp_path / "a.pt", ModelName.HOB)
        payload = torch.load(path, weights_only=True)
        payload["version"] = 99
        torch.save(payload, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, ModelName.HOB)

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "hob_group1.pt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path, ModelName.HOB)

    def test_history_file(self, tmp_path):
        path = save_history(TrainHistory(best_epoch=2), history_path(tmp_path / "hob_group1.pt"))
        assert path.name == "hob_group1.history.json"
        assert '"best_epoch": 2' in path.read_text()


class TestOverlay:
    def test_ground_truth_drawn_on_top(self):
        image = np.zeros((32, 32, 3), dtype=np.uint8)
        gt = vertical_target([10.0])
        overlay = np.asarray(render_overlay(image, gt, [gt.copy()]))
        colors = {tuple(int(v) for v in c) for c in overlay.reshape(-1, 3)} - {(0, 0, 0)}
        assert colors == {GT_COLOR}

    def test_prediction_color_and_size(self):
        image = np.zeros((32, 48, 4), dtype=np.uint8)
        gt = vertical_target([10.0], height=32, width=48)
        overlay = render_overlay(image, gt, [vertical_target([30.0], height=32, width=48)])
        assert overlay.size == (48, 32)
        pixels = np.asarray(overlay)
        assert tuple(pixels[16, 10]) == GT_COLOR
        assert tuple(pixels[16, 30]) == PREDICTION_COLOR
