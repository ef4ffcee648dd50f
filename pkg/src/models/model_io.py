"""
SXM1 model files

    bytes 0-3    magic b"SXM1"
    bytes 4-19   input, hidden, slots, classes as little-endian uint32
    then         W1, b1, W2, b2 as little-endian float32, row-major
"""
from pathlib import Path
from typing import Union

import numpy as np

from src.models.base_recognizer import NUM_CLASSES
from src.models.slot_net import HIDDEN, INPUT_DIM, SlotNet
from src.utils.atomic import atomic_write_bytes
from src.utils.errors import ModelFormatError
from src.utils.imaging import NUM_SLOTS
from src.utils.logger import logger

MAGIC = b"SXM1"
HEADER_SIZE = 4 + 4 * 4
DIMS = (INPUT_DIM, HIDDEN, NUM_SLOTS, NUM_CLASSES)
SHAPES = {
    "W1": (HIDDEN, INPUT_DIM),
    "b1": (HIDDEN,),
    "W2": (NUM_SLOTS, NUM_CLASSES, HIDDEN),
    "b2": (NUM_SLOTS, NUM_CLASSES),
}


def encode_model(model: SlotNet) -> bytes:
    header = MAGIC + np.asarray(DIMS, dtype="<u4").tobytes()
    body = b"".join(np.asarray(getattr(model, name), dtype="<f4").tobytes() for name in SHAPES)
    return header + body


def decode_model(buf: bytes, source: str = "<bytes>") -> SlotNet:
    if len(buf) < len(MAGIC) or buf[:4] != MAGIC:
        raise ModelFormatError(f"{source}: bad magic, not an SXM1 model file")
    if len(buf) < HEADER_SIZE:
        raise ModelFormatError(f"{source}: truncated header")
    dims = tuple(int(d) for d in np.frombuffer(buf[4:HEADER_SIZE], dtype="<u4"))
    if dims != DIMS:
        raise ModelFormatError(f"{source}: dimension mismatch, file has {dims}, expected {DIMS}")

    params = {}
    offset = HEADER_SIZE
    for name, shape in SHAPES.items():
        nbytes = int(np.prod(shape)) * 4
        chunk = buf[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ModelFormatError(f"{source}: truncated while reading {name}")
        params[name] = np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(buf):
        raise ModelFormatError(f"{source}: {len(buf) - offset} trailing bytes after parameters")
    return SlotNet(**params)


def save_model(model: SlotNet, path: Union[str, Path]) -> Path:
    path = atomic_write_bytes(path, encode_model(model))
    logger.info("Model saved", path=str(path))
    return path


def load_model(path: Union[str, Path]) -> SlotNet:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError as e:
        raise ModelFormatError(f"model file not found: {path}") from e
    model = decode_model(buf, str(path))
    logger.info("Model loaded", path=str(path))
    return model
