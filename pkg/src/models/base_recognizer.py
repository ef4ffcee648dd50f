"""
Base recognizer interface used by the attribution suite.

Explainers only need a scalar score for a batch of raw pixel arrays and,
for gradient methods, the gradient of that score. SlotNet implements both;
test fixtures implement the score alone.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

from src.utils.errors import CapabilityError, InvalidInputError
from src.utils.imaging import AttributionMap, Image, NUM_SLOTS

NUM_CLASSES = 37
BLANK = 0


@dataclass(frozen=True)
class GlobalScore:
    """Mean over slots of probs[k][target_labels[k]]"""
    target_labels: Tuple[int, ...]

    def __post_init__(self):
        labels = tuple(int(c) for c in self.target_labels)
        if len(labels) != NUM_SLOTS:
            raise InvalidInputError(f"global score needs {NUM_SLOTS} slot labels, got {len(labels)}")
        if any(not 0 <= c < NUM_CLASSES for c in labels):
            raise InvalidInputError(f"class indices must lie in [0, {NUM_CLASSES}): {labels}")
        object.__setattr__(self, "target_labels", labels)


@dataclass(frozen=True)
class LocalScore:
    """probs[slot][target_class]"""
    slot: int
    target_class: int

    def __post_init__(self):
        if not 0 <= self.slot < NUM_SLOTS:
            raise InvalidInputError(f"slot must lie in [0, {NUM_SLOTS}), got {self.slot}")
        if not 0 <= self.target_class < NUM_CLASSES:
            raise InvalidInputError(f"class must lie in [0, {NUM_CLASSES}), got {self.target_class}")


ScoreSpec = Union[GlobalScore, LocalScore]


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Hidden-layer pre/post activations and logits of one forward pass"""
    pre: np.ndarray
    post: np.ndarray
    logits: np.ndarray


class RuleKind(str, Enum):
    STANDARD = "standard"
    GUIDED = "guided"
    DECONV = "deconv"
    DEEPLIFT_RESCALE = "deeplift_rescale"


@dataclass(frozen=True)
class BackwardRule:
    """How gradients cross the ReLU during the backward pass"""
    kind: RuleKind = RuleKind.STANDARD
    baseline: Optional[ForwardTrace] = None

    @classmethod
    def standard(cls) -> "BackwardRule":
        return cls(RuleKind.STANDARD)

    @classmethod
    def guided(cls) -> "BackwardRule":
        return cls(RuleKind.GUIDED)

    @classmethod
    def deconv(cls) -> "BackwardRule":
        return cls(RuleKind.DECONV)

    @classmethod
    def deeplift_rescale(cls, baseline: Optional[ForwardTrace]) -> "BackwardRule":
        return cls(RuleKind.DEEPLIFT_RESCALE, baseline)


class BaseRecognizer(ABC):
    """Abstract scoring model"""

    @property
    def supports_gradients(self) -> bool:
        return False

    @abstractmethod
    def score_batch(self, images: np.ndarray, spec: ScoreSpec) -> np.ndarray:
        """
        Score many raw pixel arrays

        Args:
            images: (N, 32, 128) float array (not range-checked)
            spec: which score to compute

        Returns:
            (N,) scores
        """

    def score_gradient_batch(self, images: np.ndarray, spec: ScoreSpec, rule: BackwardRule) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} does not provide input gradients")

    def forward_trace(self, images: np.ndarray) -> Optional[ForwardTrace]:
        """Trace for a single (32, 128) array; None when the model has no hidden layer"""
        return None

    def score(self, img: Image, spec: ScoreSpec) -> float:
        return float(self.score_batch(img.data[None], spec)[0])

    def score_gradient(self, img: Image, spec: ScoreSpec, rule: BackwardRule = BackwardRule()) -> AttributionMap:
        return AttributionMap(self.score_gradient_batch(img.data[None], spec, rule)[0])
