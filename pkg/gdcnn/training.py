"""
Mini-batch training loop and test-set evaluation
"""

import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from . import tensor as T
from .analysis import ConfusionCounts, confusion_counts
from .config import settings
from .data import DatasetManifest, NoiseSpec, Sample, batches, load_samples
from .errors import NonFiniteError, TrainingError
from .logger import setup_logger
from .model import (CLASS_NAMES, Gradients, ModelConfig, Parameters, Prediction,
                    backward, forward, init_params, loss, predict)
from .monitoring import metrics
from .optim import AdamState, adam_step

logger = setup_logger(__name__)

HISTORY_COLUMNS = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


class TrainHyper(BaseModel):
    model_config = ConfigDict(frozen=True)

    batch_size: int = Field(50, ge=1)
    epochs: int = Field(40, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    seed: int = Field(0, ge=0)
    noise_sigma: float = Field(0.05, ge=0.0)
    augment: bool = True


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: Optional[float] = None
    val_acc: Optional[float] = None


class _SampleResult(NamedTuple):
    loss: float
    correct: bool
    grads: Gradients


def _sample_step(params: Parameters, config: ModelConfig, sample: Sample, seed: int) -> _SampleResult:
    prediction, trace = forward(params, config, sample.image, mode="train", seed=seed)
    return _SampleResult(
        loss=loss(prediction, config, sample.label),
        correct=prediction.label == sample.label,
        grads=backward(params, config, trace, sample.label)
    )


def score(params: Parameters, config: ModelConfig, samples: Sequence[Sample]) -> tuple[float, float]:
    """Mean eval-mode loss and accuracy"""
    losses, correct = [], 0
    for sample in samples:
        prediction = predict(params, config, sample.image)
        losses.append(loss(prediction, config, sample.label))
        correct += prediction.label == sample.label
    return float(np.mean(losses)), correct / len(samples)


def train(config: ModelConfig, dataset: DatasetManifest, hyper: TrainHyper = TrainHyper(),
          val_set: Optional[DatasetManifest] = None) -> tuple[Parameters, list[EpochRecord]]:
    """Shuffled mini-batch Adam training; every random choice is derived from hyper.seed"""
    if len(dataset) == 0:
        raise TrainingError("training set is empty")
    if any(label not in (0, 1) for label in dataset.labels):
        raise TrainingError("labels must be 0 or 1")

    params = init_params(config, hyper.seed)
    state = AdamState.initial(params, learning_rate=hyper.lr)
    noise = NoiseSpec(sigma=hyper.noise_sigma, seed=hyper.seed) if hyper.augment and hyper.noise_sigma > 0 else None
    val_samples = load_samples(val_set, config.input_size) if val_set is not None and len(val_set) else []
    history: list[EpochRecord] = []

    logger.info(f"Training {config.head} head on {len(dataset)} samples "
                f"({len(val_samples)} validation), {hyper.epochs} epochs, batch {hyper.batch_size}")

    pool = ThreadPoolExecutor(max_workers=settings.MAX_WORKERS) if settings.MAX_WORKERS > 1 else None
    with pool or nullcontext():
        for epoch in range(1, hyper.epochs + 1):
            losses, correct, seen = [], 0, 0
            epoch_seed = T.derive_seed(hyper.seed, epoch)
            for b, batch in enumerate(batches(dataset, hyper.batch_size, epoch_seed, noise, config.input_size)):
                started = time.perf_counter()
                seeds = [T.derive_seed(hyper.seed, epoch, b, i) for i in range(len(batch))]
                try:
                    if pool is not None:
                        results = list(pool.map(lambda s, k: _sample_step(params, config, s, k), batch, seeds))
                    else:
                        results = [_sample_step(params, config, s, k) for s, k in zip(batch, seeds)]
                except NonFiniteError as e:
                    raise TrainingError(f"epoch {epoch}, batch {b}: {e}") from e

                batch_loss = float(np.mean([r.loss for r in results]))
                if not np.isfinite(batch_loss):
                    raise TrainingError(f"epoch {epoch}, batch {b}: non-finite loss {batch_loss}")

                # reduce in sample order so the sum is reproducible
                grads = {name: sum(r.grads[name] for r in results) / len(results) for name in params}
                params, state = adam_step(params, grads, state)

                losses.extend(r.loss for r in results)
                correct += sum(r.correct for r in results)
                seen += len(results)
                metrics.add_samples(len(results))
                metrics.observe_batch(time.perf_counter() - started)

            record = EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)), train_acc=correct / seen)
            if val_samples:
                record.val_loss, record.val_acc = score(params, config, val_samples)
                metrics.add_samples(len(val_samples), phase='val')
            history.append(record)
            metrics.record_epoch(record.train_loss, record.train_acc, record.val_loss, record.val_acc)
            val_text = "" if record.val_loss is None else f", val loss {record.val_loss:.4f}, val acc {record.val_acc:.3f}"
            logger.info(f"Epoch {epoch}/{hyper.epochs}: loss {record.train_loss:.4f}, acc {record.train_acc:.3f}{val_text}")

    return params, history


def history_to_csv(history: Sequence[EpochRecord]) -> str:
    """Comma-separated history with 3-decimal floats; absent validation fields stay empty"""
    def fmt(value):
        return "" if value is None else f"{value:.3f}"

    frame = pd.DataFrame(
        [[r.epoch, fmt(r.train_loss), fmt(r.train_acc), fmt(r.val_loss), fmt(r.val_acc)] for r in history],
        columns=HISTORY_COLUMNS
    )
    return frame.to_csv(index=False, lineterminator="\n")


class EvaluatedSample(NamedTuple):
    sample_id: str
    label: int
    prediction: Prediction


def evaluate(params: Parameters, config: ModelConfig, dataset: DatasetManifest
             ) -> tuple[dict[str, ConfusionCounts], list[EvaluatedSample]]:
    """Eval-mode predictions and per-class confusion counts, each class in turn positive"""
    results = [
        EvaluatedSample(s.sample_id, s.label, predict(params, config, s.image))
        for s in load_samples(dataset, config.input_size)
    ]
    labels = [r.label for r in results]
    predicted = [r.prediction.label for r in results]
    counts = {name: confusion_counts(labels, predicted, positive=c) for c, name in enumerate(CLASS_NAMES)}
    metrics.add_samples(len(results), phase='eval')
    logger.info(f"Evaluated {len(results)} samples: {({k: v.model_dump() for k, v in counts.items()})}")
    return counts, results
