"""
Shared fixtures: constructed recognizers whose attribution properties are provable
"""
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from src.models.base_recognizer import NUM_CLASSES, BackwardRule, BaseRecognizer, ScoreSpec
from src.models.slot_net import HIDDEN, INPUT_DIM, Activation, SlotNet
from src.services.dataset_service import DatasetSpec, Variant, generate_dataset
from src.utils.imaging import HEIGHT, NUM_SLOTS, SLOT_WIDTH, WIDTH, Image, SegmentMap, slot_segmentation
from src.utils.seeding import make_rng


class LinearScoreModel(BaseRecognizer):
    """score(x) = <w, x> + c for every score spec; gradient w under every rule"""

    def __init__(self, weights: np.ndarray, bias: float = 0.0):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)

    @property
    def supports_gradients(self) -> bool:
        return True

    def score_batch(self, images: np.ndarray, spec: ScoreSpec) -> np.ndarray:
        return np.einsum("nhw,hw->n", np.asarray(images, dtype=np.float64), self.weights) + self.bias

    def score_gradient_batch(self, images: np.ndarray, spec: ScoreSpec, rule: BackwardRule = BackwardRule()) -> np.ndarray:
        return np.broadcast_to(self.weights, np.shape(images)).copy()


class SegmentValueModel(BaseRecognizer):
    """score = value(per-segment mean intensity); a cooperative game over segments"""

    def __init__(self, seg: SegmentMap, value: Callable[[np.ndarray], np.ndarray]):
        self.seg = seg
        self.value = value
        self.calls = 0

    def score_batch(self, images: np.ndarray, spec: ScoreSpec) -> np.ndarray:
        self.calls += 1
        flat = np.asarray(images).reshape(len(images), -1)
        labels = self.seg.labels.ravel()
        sums = np.stack([np.bincount(labels, weights=row, minlength=self.seg.segment_count) for row in flat])
        return self.value(sums / self.seg.pixel_counts())


class RecordingModel(BaseRecognizer):
    """Delegates to a SlotNet and records every score spec it is asked for"""

    def __init__(self, inner: SlotNet):
        self.inner = inner
        self.specs = []

    @property
    def supports_gradients(self) -> bool:
        return self.inner.supports_gradients

    def score_batch(self, images, spec):
        self.specs.append(spec)
        return self.inner.score_batch(images, spec)

    def score_gradient_batch(self, images, spec, rule=BackwardRule()):
        self.specs.append(spec)
        return self.inner.score_gradient_batch(images, spec, rule)

    def forward_trace(self, images):
        return self.inner.forward_trace(images)

    def predict(self, img):
        return self.inner.predict(img)


def make_slot_local_model(seed: int = 0) -> SlotNet:
    """Slot k's head only sees hidden group k, which only sees slot k's column band"""
    rng = make_rng(seed)
    group = HIDDEN // NUM_SLOTS
    columns = np.tile(np.arange(WIDTH), HEIGHT)
    W1 = np.zeros((HIDDEN, INPUT_DIM))
    W2 = np.zeros((NUM_SLOTS, NUM_CLASSES, HIDDEN))
    for k in range(NUM_SLOTS):
        band = (columns >= k * SLOT_WIDTH) & (columns < (k + 1) * SLOT_WIDTH)
        units = slice(k * group, (k + 1) * group)
        W1[units, :] = np.where(band[None, :], rng.normal(0.0, 0.1, size=(group, INPUT_DIM)), 0.0)
        W2[k, :, units] = rng.normal(0.0, 0.5, size=(NUM_CLASSES, group))
    return SlotNet(
        W1=W1,
        b1=rng.normal(0.0, 0.1, size=HIDDEN),
        W2=W2,
        b2=rng.normal(0.0, 0.1, size=(NUM_SLOTS, NUM_CLASSES)),
    )


@pytest.fixture(scope="session")
def random_model() -> SlotNet:
    return SlotNet.initialize(seed=3)


@pytest.fixture(scope="session")
def zero_model() -> SlotNet:
    return SlotNet.zeros()


@pytest.fixture(scope="session")
def identity_model() -> SlotNet:
    return replace(SlotNet.initialize(seed=5), activation=Activation.IDENTITY)


@pytest.fixture(scope="session")
def slot_local_model() -> SlotNet:
    return make_slot_local_model(seed=11)


@pytest.fixture(scope="session")
def clean_samples():
    return generate_dataset(DatasetSpec(name="fixture", size=6, variant=Variant.CLEAN, seed=42))


@pytest.fixture
def random_image() -> Image:
    return Image(make_rng(99).random((HEIGHT, WIDTH)))


@pytest.fixture
def ones_image() -> Image:
    return Image.filled(1.0)


@pytest.fixture(scope="session")
def slots() -> SegmentMap:
    return slot_segmentation()


@pytest.fixture
def linear_model() -> LinearScoreModel:
    return LinearScoreModel(make_rng(21).normal(size=(HEIGHT, WIDTH)), bias=0.25)


@pytest.fixture
def interaction_game(slots) -> SegmentValueModel:
    """Additive game with one pairwise interaction; segment 7 is a dummy"""
    a = np.array([0.5, -0.2, 0.3, 0.3, 0.1, -0.4, 0.05, 0.0])

    def value(z):
        return z @ a + 0.2 * z[:, 0] * z[:, 1]

    return SegmentValueModel(slots, value)
