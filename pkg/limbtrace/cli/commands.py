"""
Command implementations. Each command is a function of (RunConfig, disk state)
and only reads the samples it is entitled to: training reads the training
groups, evaluation reads the held-out group.
"""

import logging
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from limbtrace.core.exceptions import DivergenceDetected, EmptyReference, ValidationError
from limbtrace.models.sample import Sample
from limbtrace.models.scene import SceneBundle
from limbtrace.models.state import ModelState, TrainHistory
from limbtrace.models.target import CropAnchor, PositionTarget, ScanAxis
from limbtrace.schemas.config import ModelName, RunConfig, SegVariant
from limbtrace.schemas.dataset import Manifest, SampleMeta
from limbtrace.schemas.report import EvalReport, Method
from limbtrace.services import dataset_io, evaluation, metrics
from limbtrace.services.annotation import crop_sample, split_cv_groups, transpose_sample
from limbtrace.services.checkpoint import (
    checkpoint_path,
    history_path,
    load_checkpoint,
    save_checkpoint,
    save_history,
)
from limbtrace.services.overlay import render_overlay
from limbtrace.services.regressor import train
from limbtrace.services.segbaseline import train_seg
from limbtrace.services.synthdata import generate_scene, occlusion_percentage, rasterize, regime_schedule

logger = logging.getLogger(__name__)

METHOD_MODELS = {
    Method.HOB_CNN: ModelName.HOB,
    Method.VISIBLE_CF: ModelName.SEG_VISIBLE,
    Method.WHOLE_CF: ModelName.SEG_WHOLE,
}


def cmd_generate(config: RunConfig) -> Manifest:
    """
    Render every scene, assign CV groups and write the dataset with its manifest.

    With ``crop_augment`` each render is replaced by its top, center and bottom
    crops. The split is drawn over scenes, so the crops of one scene share its
    group.
    """
    scenes = config.scenes
    rng = np.random.default_rng(config.seeds.data)
    regimes = regime_schedule(scenes.regime_mix, scenes.count, rng)
    seeds = rng.integers(0, 2 ** 63 - 1, size=scenes.count, dtype=np.int64)
    ids = [f"s{i:05d}" for i in range(scenes.count)]
    split = split_cv_groups(ids, k=config.k_folds, seed=config.seeds.split)

    root = config.paths.dataset_root
    metas: List[SampleMeta] = []
    for sample_id, regime, seed in zip(ids, regimes, seeds):
        scene = generate_scene(scenes.kind, (scenes.width, scenes.height), regime, int(seed))
        bundle = rasterize(scene, with_depth=scenes.with_depth)
        meta = SampleMeta(
            sample_id=sample_id,
            seed=int(seed),
            kind=scenes.kind,
            regime=regime,
            occlusion_fraction=bundle.occlusion_fraction,
            canvas=scene.canvas,
            cv_group=split.group_of(sample_id),
            features=bundle.features.to_dict() if bundle.features else {},
        )
        if scenes.crop_augment:
            for crop_meta, crop in crop_variants(meta, bundle, scenes.crop_ratio):
                dataset_io.write_derived(root, crop_meta, crop)
                metas.append(crop_meta)
        else:
            dataset_io.write_sample(root, meta, scene, bundle)
            metas.append(meta)

    manifest = Manifest(
        kind=scenes.kind,
        canvas=(scenes.width, scenes.height),
        with_depth=scenes.with_depth,
        crop_ratio=scenes.crop_ratio if scenes.crop_augment else None,
        k_folds=config.k_folds,
        data_seed=config.seeds.data,
        split_seed=config.seeds.split,
        samples=metas,
    )
    dataset_io.write_manifest(root, manifest)
    logger.info("Generated %s samples from %s scenes, group sizes %s", len(metas), scenes.count, split.sizes())
    return manifest


def crop_variants(meta: SampleMeta, bundle: SceneBundle, ratio: float) -> Iterator[Tuple[SampleMeta, Sample]]:
    """Anchored crops of one render, each in the scan frame it is stored in."""
    sample = Sample(meta.sample_id, bundle.image, bundle.target, bundle.whole_mask, bundle.visible_mask)
    columns = bundle.target.axis is ScanAxis.COLUMNS
    if columns:
        sample = transpose_sample(sample)
    for anchor in CropAnchor:
        crop = crop_sample(sample, anchor, ratio)
        if columns:
            crop = transpose_sample(crop)
        try:
            occlusion = occlusion_percentage(crop.whole_mask, crop.visible_mask)
        except EmptyReference:
            logger.warning("Crop %s holds no branch pixel", crop.sample_id)
            occlusion = 0.0
        crop_meta = meta.model_copy(
            update={
                "sample_id": crop.sample_id,
                "occlusion_fraction": occlusion,
                "parent_id": meta.sample_id,
                "crop": anchor,
            }
        )
        yield crop_meta, crop


def cmd_train(config: RunConfig, model: ModelName) -> Path:
    """
    Train one model on every group except ``cv_group`` and save its checkpoint.

    A diverging run still writes the partial history next to the checkpoint
    location before the error propagates.
    """
    model = ModelName(model)
    manifest = dataset_io.load_manifest(config.paths.dataset_root)
    train_ids = manifest.split().training_ids(config.cv_group)
    samples = dataset_io.load_samples(config.paths.dataset_root, train_ids)
    training = config.training_config(model)
    path = checkpoint_path(config.paths.checkpoint_dir, model, config.cv_group)

    logger.info("Training %s on %s samples (held-out group %s)", model.value, len(samples), config.cv_group)
    try:
        if model is ModelName.HOB:
            state, history = train(config.regressor_spec(), samples, training)
        else:
            variant = SegVariant.VISIBLE if model is ModelName.SEG_VISIBLE else SegVariant.WHOLE
            state, history = train_seg(config.segmenter_spec(variant), samples, training)
    except DivergenceDetected as exc:
        save_history(TrainHistory(epochs=list(exc.history)), history_path(path))
        logger.error("%s diverged at epoch %s; partial history in %s", model.value, exc.epoch, history_path(path))
        raise

    save_checkpoint(state, path, model)
    save_history(history, history_path(path))
    return path


def load_states(config: RunConfig, methods: Optional[List[Method]] = None) -> Dict[Method, ModelState]:
    """Checkpoints of the held-out group; a missing one names its method."""
    states = {}
    for method in methods or list(Method):
        model = METHOD_MODELS[method]
        states[method] = load_checkpoint(checkpoint_path(config.paths.checkpoint_dir, model, config.cv_group), model)
    return states


def held_out_samples(config: RunConfig) -> List[Sample]:
    """Samples of the held-out group, in manifest order."""
    manifest = dataset_io.load_manifest(config.paths.dataset_root)
    ids = manifest.split().members(config.cv_group)
    if not ids:
        raise ValidationError(f"cross-validation group {config.cv_group} is empty")
    return dataset_io.load_samples(config.paths.dataset_root, ids)


def cmd_predict(config: RunConfig) -> Path:
    """Write the regressor's predictions for the held-out group."""
    return _predict(config, [Method.HOB_CNN])


def cmd_baseline(config: RunConfig) -> Path:
    """Write both curve-fitting baselines' predictions and fit diagnostics for the held-out group."""
    return _predict(config, [Method.VISIBLE_CF, Method.WHOLE_CF])


def _predict(config: RunConfig, methods: List[Method]) -> Path:
    states = load_states(config, methods)
    prediction_dir = config.paths.report_dir / "predictions"
    for sample in held_out_samples(config):
        outputs = evaluation.predict_sample(sample, states, config.evaluation)
        evaluation.write_predictions(prediction_dir, sample.sample_id, outputs)
    logger.info("Wrote %s predictions to %s", ", ".join(m.value for m in methods), prediction_dir)
    return prediction_dir


def cmd_evaluate(config: RunConfig) -> EvalReport:
    """Score all three methods on the held-out group and write the report files."""
    states = load_states(config)
    samples = held_out_samples(config)
    records = evaluation.evaluate_samples(
        samples, states, config.evaluation, prediction_dir=config.paths.report_dir / "predictions"
    )
    report = metrics.aggregate_report(records, bucket_width=config.evaluation.bucket_width)
    evaluation.write_reports(report, records, config.paths.report_dir, config.evaluation.worst_rmse_px)
    return report


def cmd_render(config: RunConfig, sample_id: str, out: Optional[Path] = None) -> Path:
    """
    Draw ground truth and every stored prediction of one sample.

    Raises:
        ValidationError: If the sample has no stored prediction.
    """
    sample = dataset_io.load_sample(config.paths.dataset_root, sample_id, row_frame=False)
    directory = config.paths.report_dir / "predictions" / sample_id
    gt = sample.target
    # Predictions are stored in the row frame the networks work in
    frame_w, frame_h = (gt.height, gt.width) if gt.axis is ScanAxis.COLUMNS else (gt.width, gt.height)

    predictions: List[PositionTarget] = []
    for method in Method:
        path = directory / evaluation.PREDICTION_FILES[method]
        if path.exists():
            pred = dataset_io.read_positions(path, frame_w, frame_h)
            predictions.append(pred.transpose() if gt.axis is ScanAxis.COLUMNS else pred)
    if not predictions:
        raise ValidationError(f"no predictions stored for sample {sample_id} under {directory}")

    out = Path(out) if out else config.paths.report_dir / "overlays" / f"{sample_id}.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    render_overlay(sample.image, gt, predictions).save(out)
    logger.info("Rendered %s predictions for %s to %s", len(predictions), sample_id, out)
    return out


def cmd_all(config: RunConfig) -> EvalReport:
    """generate, train the three models, evaluate."""
    cmd_generate(config)
    for model in ModelName:
        cmd_train(config, model)
    return cmd_evaluate(config)
