"""
Method registry - routes a method id to its explainer and validates the result
"""
from typing import Dict, List, Type

import numpy as np

from src.explainers.base_explainer import (
    AttributionMethod, BaseExplainer, ExplainRequest, MethodId, MethodParams,
)
from src.explainers.gradient_explainers import (
    DeconvolutionExplainer, DeepLiftExplainer, GradientShapExplainer,
    GuidedBackpropExplainer, InputXGradientExplainer, IntegratedGradientsExplainer,
    SaliencyExplainer,
)
from src.explainers.perturbation_explainers import (
    FeatureAblationExplainer, KernelShapExplainer, LimeExplainer, ShapleySamplingExplainer,
)
from src.models.base_recognizer import BaseRecognizer
from src.utils.errors import CapabilityError, NonFiniteAttributionError
from src.utils.imaging import AttributionMap
from src.utils.logger import logger

EXPLAINERS: Dict[MethodId, Type[BaseExplainer]] = {
    explainer.method_id: explainer
    for explainer in (
        IntegratedGradientsExplainer,
        GradientShapExplainer,
        DeepLiftExplainer,
        SaliencyExplainer,
        InputXGradientExplainer,
        GuidedBackpropExplainer,
        DeconvolutionExplainer,
        KernelShapExplainer,
        FeatureAblationExplainer,
        LimeExplainer,
        ShapleySamplingExplainer,
    )
}


def list_methods() -> List[MethodId]:
    """The eleven compared methods in reporting order"""
    return list(MethodId)


def get_explainer(method_id: MethodId, params: MethodParams = MethodParams()) -> BaseExplainer:
    return EXPLAINERS[MethodId(method_id)](params)


def explain(method: AttributionMethod, model: BaseRecognizer, req: ExplainRequest) -> AttributionMap:
    """Run one attribution method and return a validated per-pixel map"""
    explainer = get_explainer(method.id, method.params)
    if explainer.requires_gradients and not model.supports_gradients:
        raise CapabilityError(f"{method.id.value} needs input gradients, which this model does not provide")
    if explainer.requires_segments and req.segments is None:
        raise CapabilityError(f"{method.id.value} needs a segment map")

    values = explainer.attribute(model, req)
    if not np.all(np.isfinite(values)):
        logger.error("Attribution produced non-finite values", method=method.id.value)
        raise NonFiniteAttributionError(f"{method.id.value} produced non-finite attributions")
    return AttributionMap(values)
