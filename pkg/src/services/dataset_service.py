"""
Dataset Service - synthetic scene-text samples and their on-disk layout

Layout of a saved dataset:
    <root>/<name>/images/NNNNN.pgm
    <root>/<name>/labels.tsv      filename TAB label TAB top,left,bottom,right;...
"""
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from src.config.settings import settings
from src.utils.errors import DatasetError, InvalidInputError
from src.utils.glyphs import CHARSET, GLYPH_COLS, GLYPH_ROWS, glyph
from src.utils.imaging import (
    HEIGHT, NUM_SLOTS, SLOT_WIDTH, WIDTH, Image, quantize, read_pgm, write_pgm,
)
from src.utils.logger import logger
from src.utils.seeding import derive_seed, make_rng

GLYPH_SCALE = 2
JITTER = 2
NOISE_SIGMA = 0.08
LOW_CONTRAST_GAP = 0.25
MAX_LABEL_LENGTH = NUM_SLOTS

# (top, left, bottom, right), bottom/right exclusive
Box = Tuple[int, int, int, int]


class Variant(str, Enum):
    CLEAN = "clean"
    NOISY = "noisy"
    DISTRACTOR = "distractor"
    LOWCONTRAST = "lowcontrast"


class DatasetSpec(BaseModel):
    """What to generate"""
    name: str = Field(min_length=1)
    size: int = Field(ge=1)
    variant: Variant = Variant.CLEAN
    seed: int = Field(default=0, ge=0)


@dataclass(frozen=True)
class Sample:
    image: Image
    label: str
    slot_boxes: Tuple[Box, ...]


def validate_label(label: str) -> str:
    if not 1 <= len(label) <= MAX_LABEL_LENGTH:
        raise InvalidInputError(f"label length must be 1..{MAX_LABEL_LENGTH}, got {len(label)}")
    bad = sorted({c for c in label if c not in CHARSET})
    if bad:
        raise InvalidInputError(f"label {label!r} has characters outside [a-z0-9]: {bad}")
    return label


def _draw_line(canvas: np.ndarray, blocked: np.ndarray, rng: np.random.Generator, value: float) -> None:
    r0, r1 = rng.integers(0, HEIGHT, size=2)
    c0, c1 = rng.integers(0, WIDTH, size=2)
    steps = int(max(abs(r1 - r0), abs(c1 - c0))) + 1
    rows = np.rint(np.linspace(r0, r1, steps)).astype(int)
    cols = np.rint(np.linspace(c0, c1, steps)).astype(int)
    keep = ~blocked[rows, cols]
    canvas[rows[keep], cols[keep]] = value


def render_sample(label: str, variant: Union[Variant, str], rng: np.random.Generator) -> Sample:
    """
    Render a label onto a 32x128 canvas, one character per 32x16 slot.

    Draw order is fixed (intensities, jitter, then variant effects), so two
    variants rendered from equally seeded generators share glyph geometry.
    """
    validate_label(label)
    variant = Variant(variant)

    bg_u, fg_u = rng.random(2)
    if variant is Variant.LOWCONTRAST:
        background = 0.5 * bg_u
        foreground = background + LOW_CONTRAST_GAP
    else:
        background = 0.15 * bg_u
        foreground = 0.85 + 0.15 * fg_u
    jitter = rng.integers(-JITTER, JITTER + 1, size=(len(label), 2))

    canvas = np.full((HEIGHT, WIDTH), background)
    blocked = np.zeros((HEIGHT, WIDTH), dtype=bool)
    glyph_h, glyph_w = GLYPH_ROWS * GLYPH_SCALE, GLYPH_COLS * GLYPH_SCALE
    boxes: List[Box] = []
    for k, ch in enumerate(label):
        top = (HEIGHT - glyph_h) // 2 + int(jitter[k, 0])
        left = k * SLOT_WIDTH + (SLOT_WIDTH - glyph_w) // 2 + int(jitter[k, 1])
        bitmap = glyph(ch, GLYPH_SCALE)
        region = canvas[top:top + glyph_h, left:left + glyph_w]
        region[bitmap] = foreground
        blocked[top:top + glyph_h, left:left + glyph_w] = True
        boxes.append((top, left, top + glyph_h, left + glyph_w))

    if variant is Variant.NOISY:
        canvas = np.clip(canvas + rng.normal(0.0, NOISE_SIGMA, size=canvas.shape), 0.0, 1.0)
    elif variant is Variant.DISTRACTOR:
        for _ in range(int(rng.integers(1, 4))):
            _draw_line(canvas, blocked, rng, foreground)

    return Sample(image=Image(quantize(canvas)), label=label, slot_boxes=tuple(boxes))


def random_label(rng: np.random.Generator) -> str:
    length = int(rng.integers(1, MAX_LABEL_LENGTH + 1))
    return "".join(CHARSET[i] for i in rng.integers(0, len(CHARSET), size=length))


def _format_boxes(boxes: Sequence[Box]) -> str:
    return ";".join(",".join(str(v) for v in box) for box in boxes)


def _parse_boxes(field: str, where: str) -> Tuple[Box, ...]:
    boxes = []
    for chunk in field.split(";"):
        parts = chunk.split(",")
        if len(parts) != 4:
            raise DatasetError(f"{where}: slot box {chunk!r} must have 4 integers")
        try:
            top, left, bottom, right = (int(p) for p in parts)
        except ValueError as e:
            raise DatasetError(f"{where}: slot box {chunk!r} is not numeric") from e
        if not (0 <= top < bottom <= HEIGHT and 0 <= left < right <= WIDTH):
            raise DatasetError(f"{where}: slot box {chunk!r} lies outside the canvas")
        boxes.append((top, left, bottom, right))
    return tuple(boxes)


class DatasetService:
    """Generates synthetic datasets and stores them under a root directory"""

    def __init__(self, root: Union[str, Path] = settings.DATA_DIR):
        self.root = Path(root)

    def path_for(self, name: str) -> Path:
        return self.root / name

    def generate(self, spec: DatasetSpec) -> List[Sample]:
        """Sample i is a pure function of (spec.seed, i)"""
        samples = []
        for index in range(spec.size):
            rng = make_rng(spec.seed, index)
            samples.append(render_sample(random_label(rng), spec.variant, rng))
        logger.info("Dataset generated", name=spec.name, size=spec.size, variant=spec.variant.value, seed=spec.seed)
        return samples

    def epoch_samples(self, spec: DatasetSpec, epoch: int) -> List[Sample]:
        """
        A fresh draw of `spec` for one training epoch

        Epoch e renders from the sub-seed (spec.seed, e), so no two epochs
        share a label/geometry stream and the draw is independent of the others.
        """
        fresh = spec.model_copy(update={"name": f"{spec.name}@{epoch}", "seed": derive_seed(spec.seed, epoch)})
        return self.generate(fresh)

    def save(self, samples: Sequence[Sample], directory: Union[str, Path]) -> Path:
        """Write samples as <directory>/images/NNNNN.pgm plus <directory>/labels.tsv"""
        directory = Path(directory)
        images_dir = directory / "images"
        images_dir.mkdir(parents=True, exist_ok=True)
        lines = []
        for index, sample in enumerate(samples):
            filename = f"{index:05d}.pgm"
            write_pgm(images_dir / filename, sample.image)
            lines.append(f"{filename}\t{sample.label}\t{_format_boxes(sample.slot_boxes)}\n")
        (directory / "labels.tsv").write_text("".join(lines), encoding="utf-8")
        logger.info("Dataset saved", path=str(directory), size=len(samples))
        return directory

    def synthesize(self, spec: DatasetSpec) -> Path:
        """Generate and save under <root>/<spec.name>"""
        return self.save(self.generate(spec), self.path_for(spec.name))

    def load(self, directory: Union[str, Path], max_images: Optional[int] = None) -> List[Sample]:
        """Read a saved dataset, optionally only its first `max_images` samples"""
        directory = Path(directory)
        tsv = directory / "labels.tsv"
        if not tsv.is_file():
            raise DatasetError(f"dataset index not found: {tsv}")
        samples = []
        for lineno, raw in enumerate(tsv.read_text(encoding="utf-8").splitlines(), start=1):
            if not raw.strip():
                continue
            where = f"{tsv}:{lineno}"
            fields = raw.split("\t")
            if len(fields) != 3:
                raise DatasetError(f"{where}: expected 3 tab-separated fields, got {len(fields)}")
            filename, label, box_field = fields
            try:
                validate_label(label)
            except InvalidInputError as e:
                raise DatasetError(f"{where}: {e}") from e
            boxes = _parse_boxes(box_field, where)
            if len(boxes) != len(label):
                raise DatasetError(f"{where}: {len(boxes)} slot boxes for a {len(label)}-character label")
            image_path = directory / "images" / filename
            if not image_path.is_file():
                raise DatasetError(f"{where}: referenced image file missing: {image_path}")
            samples.append(Sample(image=read_pgm(image_path), label=label, slot_boxes=boxes))
        if not samples:
            raise DatasetError(f"{tsv}: dataset is empty")
        logger.info("Dataset loaded", path=str(directory), size=len(samples))
        return samples[:max_images] if max_images else samples


# Convenience functions

def generate_dataset(spec: DatasetSpec) -> List[Sample]:
    return DatasetService().generate(spec)


def save_dataset(samples: Sequence[Sample], directory: Union[str, Path]) -> Path:
    return DatasetService().save(samples, directory)


def load_dataset(directory: Union[str, Path], max_images: Optional[int] = None) -> List[Sample]:
    return DatasetService().load(directory, max_images)
