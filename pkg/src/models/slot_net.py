"""
SlotNet - dense slot-based sequence recognizer

    hidden = act(W1 . flatten(img) + b1)          256 units, ReLU
    logits[k] = W2[k] . hidden + b2[k]            k = 0..7 slots, 37 classes
    probs[k] = softmax(logits[k])

Class 0 is blank; 1..26 are a..z; 27..36 are 0..9. Decoding concatenates
the non-blank argmax characters in slot order.
"""
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Tuple

import numpy as np
from scipy.special import softmax

from src.models.base_recognizer import (
    BLANK, NUM_CLASSES, BackwardRule, BaseRecognizer, ForwardTrace, GlobalScore,
    LocalScore, RuleKind, ScoreSpec,
)
from src.utils.errors import CapabilityError, DimensionError, InvalidInputError
from src.utils.glyphs import CHARSET
from src.utils.imaging import HEIGHT, NUM_SLOTS, WIDTH, AttributionMap, Image
from src.utils.seeding import make_rng

INPUT_DIM = HEIGHT * WIDTH
HIDDEN = 256
DEEPLIFT_EPS = 1e-9


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"


def class_to_char(index: int) -> str:
    return "" if index == BLANK else CHARSET[index - 1]


def char_to_class(ch: str) -> int:
    if ch not in CHARSET:
        raise InvalidInputError(f"character {ch!r} is not in the charset")
    return CHARSET.index(ch) + 1


def label_to_slots(label: str) -> np.ndarray:
    """Slot-aligned targets: char k -> slot k, blank elsewhere"""
    targets = np.full(NUM_SLOTS, BLANK, dtype=np.int64)
    for k, ch in enumerate(label[:NUM_SLOTS]):
        targets[k] = char_to_class(ch)
    return targets


@dataclass(frozen=True, eq=False)
class ModelOutput:
    probs: np.ndarray
    logits: np.ndarray


def _readonly(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SlotNet(BaseRecognizer):
    """Immutable parameter set; every method is pure"""
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: Activation = Activation.RELU
    gradients_enabled: bool = True

    def __post_init__(self):
        expected = {
            "W1": (HIDDEN, INPUT_DIM),
            "b1": (HIDDEN,),
            "W2": (NUM_SLOTS, NUM_CLASSES, HIDDEN),
            "b2": (NUM_SLOTS, NUM_CLASSES),
        }
        for name, shape in expected.items():
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != shape:
                raise DimensionError(f"{name} must have shape {shape}, got {value.shape}")
            if not np.all(np.isfinite(value)):
                raise InvalidInputError(f"{name} contains non-finite parameters")
            object.__setattr__(self, name, _readonly(value))
        object.__setattr__(self, "activation", Activation(self.activation))

    # -- construction -----------------------------------------------------

    @classmethod
    def zeros(cls) -> "SlotNet":
        return cls(
            W1=np.zeros((HIDDEN, INPUT_DIM)),
            b1=np.zeros(HIDDEN),
            W2=np.zeros((NUM_SLOTS, NUM_CLASSES, HIDDEN)),
            b2=np.zeros((NUM_SLOTS, NUM_CLASSES)),
        )

    @classmethod
    def initialize(cls, seed: int = 0) -> "SlotNet":
        """He-normal first layer, fan-in scaled heads, zero biases"""
        rng = make_rng(seed)
        return cls(
            W1=rng.normal(0.0, np.sqrt(2.0 / INPUT_DIM), size=(HIDDEN, INPUT_DIM)),
            b1=np.zeros(HIDDEN),
            W2=rng.normal(0.0, np.sqrt(1.0 / HIDDEN), size=(NUM_SLOTS, NUM_CLASSES, HIDDEN)),
            b2=np.zeros((NUM_SLOTS, NUM_CLASSES)),
        )

    def without_gradients(self) -> "SlotNet":
        """Forward-only stand-in: gradient methods raise CapabilityError"""
        return replace(self, gradients_enabled=False)

    @property
    def supports_gradients(self) -> bool:
        return self.gradients_enabled

    # -- forward ----------------------------------------------------------

    def _act(self, pre: np.ndarray) -> np.ndarray:
        return pre if self.activation is Activation.IDENTITY else np.maximum(pre, 0.0)

    def _flatten(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 3 or images.shape[1:] != (HEIGHT, WIDTH):
            raise DimensionError(f"expected (N, {HEIGHT}, {WIDTH}) images, got {images.shape}")
        if not np.all(np.isfinite(images)):
            raise InvalidInputError("input images contain non-finite values")
        return images.reshape(len(images), INPUT_DIM)

    def forward_batch(self, images: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Returns (probs, logits, pre, post) for (N, 32, 128) arrays"""
        x = self._flatten(images)
        pre = x @ self.W1.T + self.b1
        post = self._act(pre)
        logits = np.einsum("nh,kch->nkc", post, self.W2) + self.b2
        return softmax(logits, axis=-1), logits, pre, post

    def forward(self, img: Image) -> Tuple[ModelOutput, ForwardTrace]:
        probs, logits, pre, post = self.forward_batch(img.data[None])
        out = ModelOutput(probs=probs[0], logits=logits[0])
        return out, ForwardTrace(pre=pre[0], post=post[0], logits=logits[0])

    def forward_trace(self, images: np.ndarray) -> ForwardTrace:
        _, logits, pre, post = self.forward_batch(np.asarray(images)[None])
        return ForwardTrace(pre=pre[0], post=post[0], logits=logits[0])

    def predict_batch(self, images: np.ndarray) -> np.ndarray:
        """(N, 8) slot argmax, ties to the lowest class index"""
        probs = self.forward_batch(images)[0]
        return np.argmax(probs, axis=-1)

    def predict(self, img: Image) -> np.ndarray:
        return self.predict_batch(img.data[None])[0]

    # -- scores -----------------------------------------------------------

    def score_batch(self, images: np.ndarray, spec: ScoreSpec) -> np.ndarray:
        probs = self.forward_batch(images)[0]
        return _score_from_probs(probs, spec)

    def score_gradient_batch(self, images: np.ndarray, spec: ScoreSpec, rule: BackwardRule = BackwardRule()) -> np.ndarray:
        if not self.gradients_enabled:
            raise CapabilityError("model was loaded without gradient capability (--no-grad)")
        if rule.kind is RuleKind.DEEPLIFT_RESCALE and rule.baseline is None:
            raise CapabilityError("DeepLift rescale rule requires a baseline forward trace")

        probs, _, pre, post = self.forward_batch(images)
        g_logits = _score_logit_gradient(probs, spec)
        g_post = np.einsum("nkc,kch->nh", g_logits, self.W2)
        g_pre = self._relu_backward(g_post, pre, post, rule)
        return (g_pre @ self.W1).reshape(len(probs), HEIGHT, WIDTH)

    def _relu_backward(self, g_post: np.ndarray, pre: np.ndarray, post: np.ndarray, rule: BackwardRule) -> np.ndarray:
        if self.activation is Activation.IDENTITY:
            return g_post
        active = pre > 0.0
        if rule.kind is RuleKind.STANDARD:
            return g_post * active
        if rule.kind is RuleKind.GUIDED:
            return g_post * (active & (g_post >= 0.0))
        if rule.kind is RuleKind.DECONV:
            return np.maximum(g_post, 0.0)
        # DeepLift rescale: multiplier = delta_out / delta_in against the baseline
        delta_pre = pre - rule.baseline.pre
        delta_post = post - rule.baseline.post
        small = np.abs(delta_pre) < DEEPLIFT_EPS
        safe = np.where(small, 1.0, delta_pre)
        multiplier = np.where(small, active.astype(np.float64), delta_post / safe)
        return g_post * multiplier


def _score_from_probs(probs: np.ndarray, spec: ScoreSpec) -> np.ndarray:
    if isinstance(spec, GlobalScore):
        labels = np.asarray(spec.target_labels)
        return probs[:, np.arange(NUM_SLOTS), labels].mean(axis=1)
    if isinstance(spec, LocalScore):
        return probs[:, spec.slot, spec.target_class]
    raise InvalidInputError(f"unknown score spec {spec!r}")


def _score_logit_gradient(probs: np.ndarray, spec: ScoreSpec) -> np.ndarray:
    """d score / d logits, shape (N, 8, 37)"""
    n = len(probs)
    grad = np.zeros_like(probs)
    if isinstance(spec, GlobalScore):
        slots = np.arange(NUM_SLOTS)
        labels = np.asarray(spec.target_labels)
        p_target = probs[:, slots, labels]                      # (N, 8)
        grad = -(p_target[:, :, None] * probs) / NUM_SLOTS
        grad[:, slots, labels] += p_target / NUM_SLOTS
        return grad
    if isinstance(spec, LocalScore):
        p_target = probs[:, spec.slot, spec.target_class]      # (N,)
        grad[:, spec.slot, :] = -p_target[:, None] * probs[:, spec.slot, :]
        grad[np.arange(n), spec.slot, spec.target_class] += p_target
        return grad
    raise InvalidInputError(f"unknown score spec {spec!r}")


# Convenience functions

def forward(model: SlotNet, img: Image) -> Tuple[ModelOutput, ForwardTrace]:
    return model.forward(img)


def decode(out: ModelOutput) -> Tuple[str, List[int]]:
    """(text, slot_argmax); text joins the non-blank slot characters in order"""
    slot_argmax = [int(c) for c in np.argmax(out.probs, axis=-1)]
    return decode_classes(slot_argmax), slot_argmax


def decode_classes(slot_classes) -> str:
    return "".join(class_to_char(int(c)) for c in slot_classes)


def score(model: BaseRecognizer, img: Image, spec: ScoreSpec) -> float:
    return model.score(img, spec)


def score_gradient(model: BaseRecognizer, img: Image, spec: ScoreSpec, rule: BackwardRule = BackwardRule()) -> AttributionMap:
    return model.score_gradient(img, spec, rule)


def frozen_prediction(model: SlotNet, img: Image) -> GlobalScore:
    """Global score spec targeting the model's own prediction on img"""
    return GlobalScore(tuple(int(c) for c in model.predict(img)))
