"""Minibatch training loop shared by the regressor and the segmentation baseline."""

import logging
import math
from typing import Callable, List, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from limbtrace.core.exceptions import DivergenceDetected, ValidationError
from limbtrace.models.sample import Sample
from limbtrace.models.state import EpochStats, ModelState, TrainHistory
from limbtrace.schemas.config import TrainConfig
from limbtrace.services.annotation import flip_sample
from limbtrace.services.optim import adam_step

logger = logging.getLogger(__name__)

LossFn = Callable[[nn.Module, Sequence[Sample]], torch.Tensor]


def holdout_split(
    dataset: Sequence[Sample], fraction: float, seed: int
) -> Tuple[List[Sample], List[Sample]]:
    """
    Seeded (train, validation) split of the training groups.

    When the fraction rounds to no sample, or to all of them, the whole
    dataset is used for both.
    """
    samples = list(dataset)
    n_val = int(round(fraction * len(samples)))
    if n_val == 0 or n_val >= len(samples):
        return samples, samples
    order = np.random.default_rng(seed).permutation(len(samples))
    held = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in held]
    validation = [s for i, s in enumerate(samples) if i in held]
    return train, validation


def evaluate_loss(state: ModelState, samples: Sequence[Sample], loss_fn: LossFn, batch_size: int) -> float:
    """Sample-weighted mean loss over ``samples`` without augmentation."""
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = samples[start:start + batch_size]
            total += float(loss_fn(state.network, batch)) * len(batch)
    return total / len(samples)


def fit(
    state: ModelState,
    dataset: Sequence[Sample],
    config: TrainConfig,
    loss_fn: LossFn,
    label: str = "model",
) -> Tuple[ModelState, TrainHistory]:
    """
    Train ``state`` for ``config.epochs`` epochs and return the best epoch's state.

    Every epoch shuffles the training samples with a generator seeded by
    ``config.seed`` and mirrors each sample with probability 0.5 when
    ``config.hflip`` is set. The ids entering every batch are logged at
    DEBUG and collected in ``history.seen_sample_ids``.

    Raises:
        ValidationError: If the dataset is empty.
        DivergenceDetected: If a loss or gradient becomes non-finite; carries
            the epoch index and the history recorded so far.
    """
    if not dataset:
        raise ValidationError("cannot train on an empty dataset")

    train_set, validation_set = holdout_split(dataset, config.validation_fraction, config.seed)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    seen = set()
    best_state, best_loss = state.clone(), math.inf

    logger.info(
        "Training %s on %s samples (%s for validation) for %s epochs",
        label, len(train_set), len(validation_set), config.epochs,
    )
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        running, count = 0.0, 0
        state.network.train()
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            if config.hflip:
                flips = rng.random(len(batch)) < 0.5
                batch = [flip_sample(s) if f else s for s, f in zip(batch, flips)]
            ids = [s.sample_id for s in batch]
            logger.debug("%s epoch %s batch ids %s", label, epoch, ids)
            seen.update(ids)

            state.network.zero_grad()
            loss = loss_fn(state.network, batch)
            if not torch.isfinite(loss):
                logger.error("%s loss became non-finite at epoch %s", label, epoch)
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}", epoch=epoch, history=history.epochs)
            loss.backward()
            gradients = {
                name: p.grad if p.grad is not None else torch.zeros_like(p)
                for name, p in state.network.named_parameters()
            }
            try:
                adam_step(state, gradients, config)
            except DivergenceDetected as exc:
                raise DivergenceDetected(str(exc), epoch=epoch, history=history.epochs) from exc
            running += float(loss) * len(batch)
            count += len(batch)

        state.network.eval()
        validation_loss = evaluate_loss(state, validation_set, loss_fn, config.batch_size)
        if not math.isfinite(validation_loss):
            raise DivergenceDetected(
                f"non-finite validation loss at epoch {epoch}", epoch=epoch, history=history.epochs
            )
        history.epochs.append(EpochStats(epoch=epoch, train_loss=running / count, validation_loss=validation_loss))
        if validation_loss < best_loss:
            best_loss = validation_loss
            best_state = state.clone()
            history.best_epoch = epoch
        logger.info(
            "%s epoch %s/%s: train %.6f, validation %.6f",
            label, epoch, config.epochs, running / count, validation_loss,
        )

    history.seen_sample_ids = sorted(seen)
    logger.info("%s selected epoch %s (validation %.6f)", label, history.best_epoch, best_loss)
    return best_state, history
