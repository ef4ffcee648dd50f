"""
Core raster types: images, segmentations, attribution maps, heatmaps.

All arrays held by these types are float64 (labels: int64) and flagged
read-only, so instances can be shared freely between threads.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Tuple, Union

import numpy as np

from src.utils.errors import DatasetError, DimensionError, InvalidInputError

HEIGHT = 32
WIDTH = 128
SLOT_WIDTH = 16
NUM_SLOTS = WIDTH // SLOT_WIDTH

PathLike = Union[str, Path]

GREEN = np.array([0.0, 255.0, 0.0])
RED = np.array([255.0, 0.0, 0.0])


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Image:
    """Grayscale 32x128 raster with intensities in [0, 1]"""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != (HEIGHT, WIDTH):
            raise DimensionError(f"image must be {HEIGHT}x{WIDTH}, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("image contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise InvalidInputError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data, np.float64))

    @property
    def height(self) -> int:
        return HEIGHT

    @property
    def width(self) -> int:
        return WIDTH

    @classmethod
    def filled(cls, value: float) -> "Image":
        return cls(np.full((HEIGHT, WIDTH), float(value)))

    def __eq__(self, other) -> bool:
        return isinstance(other, Image) and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SegmentMap:
    """Partition of pixels into segments 0..segment_count-1"""
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DimensionError(f"segment labels must be 2-D, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise InvalidInputError("segment labels must be integers")
        if labels.size == 0 or labels.min() < 0:
            raise InvalidInputError("segment labels must be non-negative")
        count = int(labels.max()) + 1
        present = np.bincount(labels.ravel(), minlength=count)
        if np.any(present == 0):
            missing = np.flatnonzero(present == 0)
            raise InvalidInputError(f"segment ids {missing.tolist()} do not occur in the map")
        object.__setattr__(self, "labels", _frozen(labels, np.int64))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def segment_count(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    def pixel_counts(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.segment_count)


@dataclass(frozen=True, eq=False)
class AttributionMap:
    """Signed per-pixel relevance"""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"attribution map must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("attribution map contains non-finite values")
        object.__setattr__(self, "values", _frozen(values, np.float64))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @classmethod
    def zeros(cls, shape: Tuple[int, int] = (HEIGHT, WIDTH)) -> "AttributionMap":
        return cls(np.zeros(shape))

    @classmethod
    def from_segment_scores(cls, scores: "SegmentScores", seg: SegmentMap) -> "AttributionMap":
        """Broadcast one value per segment to every pixel of that segment"""
        if len(scores.scores) != seg.segment_count:
            raise DimensionError(
                f"{len(scores.scores)} scores for {seg.segment_count} segments"
            )
        return cls(scores.scores[seg.labels])

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass(frozen=True, eq=False)
class SegmentScores:
    """One real value per segment id"""
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1:
            raise DimensionError("segment scores must be a 1-D vector")
        if not np.all(np.isfinite(scores)):
            raise InvalidInputError("segment scores contain non-finite values")
        object.__setattr__(self, "scores", _frozen(scores, np.float64))

    def __len__(self) -> int:
        return len(self.scores)


def grid_segmentation(height: int = HEIGHT, width: int = WIDTH, cell: int = 8) -> SegmentMap:
    """Regular cell x cell grid, ids assigned row-major over cells"""
    if cell <= 0 or height % cell or width % cell:
        raise DimensionError(f"cell size {cell} must divide both {height} and {width}")
    cols = width // cell
    rows = np.arange(height)[:, None] // cell
    columns = np.arange(width)[None, :] // cell
    return SegmentMap(rows * cols + columns)


def slot_segmentation(height: int = HEIGHT, width: int = WIDTH) -> SegmentMap:
    """One segment per recognizer slot (16-pixel column band)"""
    if width % SLOT_WIDTH:
        raise DimensionError(f"width {width} is not a multiple of the slot width")
    labels = np.broadcast_to(np.arange(width)[None, :] // SLOT_WIDTH, (height, width))
    return SegmentMap(labels)


def _check_dims(shape_a, shape_b, what: str) -> None:
    if tuple(shape_a) != tuple(shape_b):
        raise DimensionError(f"{what}: {tuple(shape_a)} vs {tuple(shape_b)}")


def segment_means(attr: AttributionMap, seg: SegmentMap) -> SegmentScores:
    """Mean attribution over the pixels of every segment"""
    _check_dims(attr.shape, seg.shape, "attribution/segmentation dims differ")
    sums = np.bincount(seg.labels.ravel(), weights=attr.values.ravel(), minlength=seg.segment_count)
    return SegmentScores(sums / seg.pixel_counts())


def _removed_ids(seg: SegmentMap, removed: Iterable[int]) -> np.ndarray:
    ids = np.asarray(sorted(set(int(i) for i in removed)), dtype=np.int64)
    if ids.size and (ids[0] < 0 or ids[-1] >= seg.segment_count):
        raise InvalidInputError(
            f"segment ids must lie in [0, {seg.segment_count}), got {ids.tolist()}"
        )
    return ids


def mask_segments(img: Image, seg: SegmentMap, removed: Iterable[int], baseline: float = 0.0) -> Image:
    """Set every pixel of the removed segments to the baseline intensity"""
    _check_dims(img.data.shape, seg.shape, "image/segmentation dims differ")
    ids = _removed_ids(seg, removed)
    if ids.size == 0:
        return img
    mask = np.isin(seg.labels, ids)
    return Image(np.where(mask, float(baseline), img.data))


def masked_batch(img: Image, seg: SegmentMap, keep: np.ndarray, baseline: float = 0.0) -> np.ndarray:
    """
    Build many perturbed copies of an image at once.

    Args:
        keep: (N, segment_count) boolean matrix; False marks a masked segment

    Returns:
        (N, H, W) float array
    """
    keep = np.asarray(keep, dtype=bool)
    if keep.ndim != 2 or keep.shape[1] != seg.segment_count:
        raise DimensionError(f"coalition matrix must be (N, {seg.segment_count}), got {keep.shape}")
    _check_dims(img.data.shape, seg.shape, "image/segmentation dims differ")
    pixel_keep = keep[:, seg.labels]
    return np.where(pixel_keep, img.data[None, :, :], float(baseline))


def heatmap_weights(attr: AttributionMap) -> np.ndarray:
    """Signed blend weights in [-1, 1]: value / max|value| (zeros for a zero map)"""
    peak = attr.max_abs()
    if peak == 0.0:
        return np.zeros(attr.shape)
    return attr.values / peak


def render_heatmap(img: Image, attr: AttributionMap) -> np.ndarray:
    """
    Overlay an attribution map on the grayscale image.

    Positive values blend toward green, negative toward red, with blend
    weight |value| / max|value|. Returns an (H, W, 3) uint8 raster.
    """
    _check_dims(img.data.shape, attr.shape, "image/attribution dims differ")
    gray = np.repeat((img.data * 255.0)[:, :, None], 3, axis=2)
    weights = heatmap_weights(attr)
    strength = np.abs(weights)[:, :, None]
    target = np.where((weights > 0)[:, :, None], GREEN, RED)
    blended = (1.0 - strength) * gray + strength * target
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# PGM / PPM I/O
# ---------------------------------------------------------------------------

def _read_token(buf: bytes, pos: int) -> Tuple[bytes, int]:
    while pos < len(buf):
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ValueError("unexpected end of header")
    return buf[start:pos], pos


def _parse_netpbm(buf: bytes, magic: bytes, channels: int, source: str) -> np.ndarray:
    try:
        token, pos = _read_token(buf, 0)
        if token != magic:
            raise ValueError(f"expected magic {magic.decode()}, found {token[:8]!r}")
        width_tok, pos = _read_token(buf, pos)
        height_tok, pos = _read_token(buf, pos)
        maxval_tok, pos = _read_token(buf, pos)
        width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    except ValueError as e:
        raise DatasetError(f"{source}: malformed header ({e})") from e
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise DatasetError(f"{source}: invalid header values {width}x{height} maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * channels * dtype.itemsize
    payload = buf[pos:pos + expected]
    if len(payload) != expected:
        raise DatasetError(f"{source}: truncated pixel data ({len(payload)} of {expected} bytes)")
    raster = np.frombuffer(payload, dtype=dtype).astype(np.float64) / maxval
    shape = (height, width) if channels == 1 else (height, width, channels)
    return raster.reshape(shape)


def write_pgm(path: PathLike, img: Image) -> None:
    """Binary PGM (P5, maxval 255)"""
    pixels = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{WIDTH} {HEIGHT}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def read_pgm(path: PathLike) -> Image:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError as e:
        raise DatasetError(f"image file not found: {path}") from e
    raster = _parse_netpbm(buf, b"P5", 1, str(path))
    try:
        return Image(raster)
    except DimensionError as e:
        raise DatasetError(f"{path}: {e}") from e


def write_ppm(path: PathLike, raster: np.ndarray) -> None:
    """Binary PPM (P6, maxval 255) from an (H, W, 3) uint8 raster"""
    raster = np.asarray(raster)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise DimensionError(f"PPM raster must be (H, W, 3), got {raster.shape}")
    height, width = raster.shape[:2]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raster.astype(np.uint8).tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError as e:
        raise DatasetError(f"image file not found: {path}") from e
    return np.rint(_parse_netpbm(buf, b"P6", 3, str(path)) * 255.0).astype(np.uint8)


def write_png(path: PathLike, raster: np.ndarray) -> None:
    """PNG copy of an RGB raster (Pillow)"""
    from PIL import Image as PILImage

    PILImage.fromarray(np.asarray(raster, dtype=np.uint8)).save(Path(path))


def stack_rasters(rasters: Iterable[np.ndarray], gap: int = 2, fill: int = 255) -> np.ndarray:
    """Stack equally wide RGB rasters vertically with a separator band"""
    rasters = [np.asarray(r, dtype=np.uint8) for r in rasters]
    if not rasters:
        raise DimensionError("nothing to stack")
    width = rasters[0].shape[1]
    parts = []
    for i, raster in enumerate(rasters):
        if raster.shape[1] != width:
            raise DimensionError("all rasters must share a width")
        if i:
            parts.append(np.full((gap, width, 3), fill, dtype=np.uint8))
        parts.append(raster)
    return np.concatenate(parts, axis=0)


def quantize(data: np.ndarray, levels: int = 255) -> np.ndarray:
    """Snap intensities to multiples of 1/levels (exactly representable in PGM)"""
    return np.clip(np.rint(np.asarray(data) * levels), 0, levels) / levels
