"""
Base Explainer class for all attribution methods
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.models.base_recognizer import BaseRecognizer, ScoreSpec
from src.utils.errors import DimensionError, InvalidInputError
from src.utils.imaging import Image, SegmentMap


class MethodId(str, Enum):
    """Compared attribution methods, in reporting order"""
    INTEGRATED_GRADIENTS = "IntegratedGradients"
    GRADIENT_SHAP = "GradientSHAP"
    DEEP_LIFT = "DeepLift"
    SALIENCY = "Saliency"
    INPUT_X_GRADIENT = "InputXGradient"
    GUIDED_BACKPROP = "GuidedBackprop"
    DECONVOLUTION = "Deconvolution"
    KERNEL_SHAP = "KernelSHAP"
    FEATURE_ABLATION = "FeatureAblation"
    LIME = "LIME"
    SHAPLEY_SAMPLING = "ShapleySampling"


class MethodParams(BaseModel):
    """Hyperparameters for every method; each method reads its own fields"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    ig_steps: int = Field(default=32, ge=2)
    gradshap_samples: int = Field(default=16, ge=1)
    gradshap_stdev: float = Field(default=0.09, ge=0.0)
    kernelshap_samples: int = Field(default=400, ge=1)
    kernelshap_full_enumeration: bool = False
    lime_samples: int = Field(default=400, ge=1)
    lime_kernel_width: float = Field(default=0.25, gt=0.0)
    lime_ridge: float = Field(default=1e-3, ge=0.0)
    shapley_permutations: int = Field(default=25, ge=1)
    batch_size: int = Field(default=256, ge=1)
    seed: int = Field(default=0, ge=0)


class AttributionMethod(BaseModel):
    """A method id together with its hyperparameters"""
    model_config = ConfigDict(frozen=True)

    id: MethodId
    params: MethodParams = MethodParams()


@dataclass(frozen=True)
class ExplainRequest:
    """What to explain: image, score, optional segmentation, masking baseline"""
    image: Image
    spec: ScoreSpec
    segments: Optional[SegmentMap] = None
    baseline: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.baseline <= 1.0:
            raise InvalidInputError(f"baseline intensity must lie in [0, 1], got {self.baseline}")
        if self.segments is not None and self.segments.shape != self.image.data.shape:
            raise DimensionError(
                f"segment map {self.segments.shape} does not match image {self.image.data.shape}"
            )

    def baseline_array(self) -> np.ndarray:
        return np.full(self.image.data.shape, float(self.baseline))


class BaseExplainer(ABC):
    """Abstract base class for all attribution methods"""

    method_id: MethodId
    requires_gradients: bool = False
    requires_segments: bool = False

    def __init__(self, params: MethodParams = MethodParams()):
        self.params = params

    @abstractmethod
    def attribute(self, model: BaseRecognizer, req: ExplainRequest) -> np.ndarray:
        """
        Compute raw per-pixel attributions

        Args:
            model: recognizer providing scores (and gradients if required)
            req: image, score spec, segmentation and baseline

        Returns:
            (H, W) float array; validated by the caller
        """
