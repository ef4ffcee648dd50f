"""
Exception hierarchy shared by every layer.

The CLI maps ConfigError (and UsageError) to exit code 1 and every other
SeqAttrError to exit code 2.
"""
from typing import List, Optional


class SeqAttrError(Exception):
    """Base class for all seqattr failures"""


class DimensionError(SeqAttrError, ValueError):
    """Shapes, cell sizes or map dimensions do not agree"""


class InvalidInputError(SeqAttrError, ValueError):
    """Out-of-range ids, indices, labels or non-finite values"""


class DatasetError(SeqAttrError):
    """Malformed dataset directory, labels.tsv or image file"""


class ModelFormatError(SeqAttrError):
    """SXM1 model file cannot be decoded"""


class CapabilityError(SeqAttrError):
    """A method needs something the model or request does not provide"""


class NonFiniteAttributionError(SeqAttrError):
    """An explainer produced NaN or infinite values"""


class TrainingDivergedError(SeqAttrError):
    """Training loss became non-finite"""

    def __init__(self, epoch: int, batch: int, history: Optional[List[float]] = None):
        self.epoch = epoch
        self.batch = batch
        self.history = list(history or [])
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch} "
            f"(completed epoch losses: {self.history})"
        )


class ConfigError(SeqAttrError):
    """Run configuration could not be parsed or validated"""


class UsageError(ConfigError):
    """Bad command-line arguments"""
