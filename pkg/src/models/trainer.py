"""
SlotNet training and accuracy evaluation
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import log_softmax, softmax

from src.models.slot_net import Activation, SlotNet, decode_classes, label_to_slots
from src.services.dataset_service import DatasetService, DatasetSpec, Sample, Variant
from src.utils.errors import InvalidInputError, TrainingDivergedError
from src.utils.imaging import NUM_SLOTS
from src.utils.logger import logger
from src.utils.seeding import make_rng


class TrainingConfig(BaseModel):
    """SGD hyperparameters"""
    epochs: int = Field(default=30, ge=0)
    learning_rate: float = Field(default=0.05, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    batch_size: int = Field(default=32, ge=1)
    seed: int = Field(default=0, ge=0)
    # epochs after the first see a freshly rendered set of this variant; None reuses the given set
    fresh_variant: Optional[Variant] = Variant.CLEAN


@dataclass(frozen=True)
class TrainingResult:
    model: SlotNet
    loss_history: List[float]


@dataclass(frozen=True)
class AccuracySummary:
    """Exact match over a dataset plus per-slot accuracy and confidence"""
    exact_match: float
    slot_accuracy: Tuple[float, ...]
    slot_confidence: Tuple[float, ...]
    count: int

    def to_dict(self) -> dict:
        return {
            "exact_match": self.exact_match,
            "slot_accuracy": list(self.slot_accuracy),
            "slot_confidence": list(self.slot_confidence),
            "count": self.count,
        }


def _stack(samples: Sequence[Sample]):
    images = np.stack([s.image.data for s in samples]).reshape(len(samples), -1)
    targets = np.stack([label_to_slots(s.label) for s in samples])
    return images, targets


def train(model: SlotNet, samples: Sequence[Sample], config: TrainingConfig = TrainingConfig()) -> TrainingResult:
    """
    Minimize mean per-slot cross-entropy with momentum SGD.

    Works on a private copy of the parameters; the input model is untouched.
    Epoch 0 runs over `samples`. With `fresh_variant` set, every later epoch e
    runs over len(samples) new images drawn from the stream (config.seed, e);
    otherwise over `samples` again. Shuffling for epoch e uses (config.seed, e).
    """
    if not samples:
        raise InvalidInputError("cannot train on an empty dataset")

    X, targets = _stack(samples)
    n = len(X)
    params = {name: np.array(getattr(model, name), dtype=np.float64) for name in ("W1", "b1", "W2", "b2")}
    velocity = {name: np.zeros_like(value) for name, value in params.items()}
    slots = np.arange(NUM_SLOTS)
    relu = model.activation is Activation.RELU
    history: List[float] = []
    datasets = DatasetService()
    fresh = None
    if config.fresh_variant is not None:
        fresh = DatasetSpec(name="train-fresh", size=n, variant=config.fresh_variant, seed=config.seed)

    logger.info("Training started", samples=n, **config.model_dump(mode="json"))
    for epoch in range(config.epochs):
        if fresh is not None and epoch > 0:
            X, targets = _stack(datasets.epoch_samples(fresh, epoch))
        order = make_rng(config.seed, epoch).permutation(n)
        batch_losses = []
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            x, y = X[idx], targets[idx]
            b = len(idx)

            pre = x @ params["W1"].T + params["b1"]
            post = np.maximum(pre, 0.0) if relu else pre
            logits = np.einsum("nh,kch->nkc", post, params["W2"]) + params["b2"]
            log_probs = log_softmax(logits, axis=-1)
            loss = -log_probs[np.arange(b)[:, None], slots, y].mean()
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, batch_index, history)
            batch_losses.append(loss * b)

            g_logits = softmax(logits, axis=-1)
            g_logits[np.arange(b)[:, None], slots, y] -= 1.0
            g_logits /= b * NUM_SLOTS
            g_post = np.einsum("nkc,kch->nh", g_logits, params["W2"])
            g_pre = g_post * (pre > 0.0) if relu else g_post
            grads = {
                "W2": np.einsum("nkc,nh->kch", g_logits, post),
                "b2": g_logits.sum(axis=0),
                "W1": g_pre.T @ x,
                "b1": g_pre.sum(axis=0),
            }
            for name, grad in grads.items():
                velocity[name] = config.momentum * velocity[name] + grad
                params[name] -= config.learning_rate * velocity[name]

        epoch_loss = math.fsum(batch_losses) / n
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch, len(batch_losses) - 1, history)
        history.append(epoch_loss)
        logger.info("Epoch finished", epoch=epoch, loss=round(epoch_loss, 6), fresh=fresh is not None and epoch > 0)

    trained = SlotNet(activation=model.activation, gradients_enabled=model.gradients_enabled, **params)
    return TrainingResult(model=trained, loss_history=history)


def _predictions(model: SlotNet, samples: Sequence[Sample], batch_size: int = 256):
    """(N, 8) predicted classes and their probabilities"""
    classes, confidences = [], []
    for start in range(0, len(samples), batch_size):
        chunk = np.stack([s.image.data for s in samples[start:start + batch_size]])
        probs = model.forward_batch(chunk)[0]
        predicted = np.argmax(probs, axis=-1)
        classes.append(predicted)
        confidences.append(np.take_along_axis(probs, predicted[..., None], axis=-1)[..., 0])
    return np.concatenate(classes), np.concatenate(confidences)


def predict_texts(model: SlotNet, samples: Sequence[Sample], batch_size: int = 256) -> List[str]:
    classes, _ = _predictions(model, samples, batch_size)
    return [decode_classes(row) for row in classes]


def evaluate_dataset(model: SlotNet, samples: Sequence[Sample]) -> AccuracySummary:
    """Exact match, per-slot accuracy (blanks included) and mean per-slot confidence of the prediction"""
    if not samples:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    classes, confidences = _predictions(model, samples)
    texts = [decode_classes(row) for row in classes]
    targets = np.stack([label_to_slots(s.label) for s in samples])
    summary = AccuracySummary(
        exact_match=sum(t == s.label for t, s in zip(texts, samples)) / len(samples),
        slot_accuracy=tuple(float(v) for v in (classes == targets).mean(axis=0)),
        slot_confidence=tuple(float(v) for v in confidences.mean(axis=0)),
        count=len(samples),
    )
    logger.debug("Dataset evaluated", **summary.to_dict())
    return summary


def evaluate_accuracy(model: SlotNet, samples: Sequence[Sample]) -> float:
    """Exact-match accuracy of decoded predictions against ground truth"""
    return evaluate_dataset(model, samples).exact_match
