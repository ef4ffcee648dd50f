"""
Explainers package - attribution method implementations
"""
from src.explainers.base_explainer import (
    AttributionMethod, BaseExplainer, ExplainRequest, MethodId, MethodParams,
)
from src.explainers.registry import explain, get_explainer, list_methods
from src.explainers.shapley_oracle import exact_shapley

__all__ = [
    'AttributionMethod',
    'BaseExplainer',
    'ExplainRequest',
    'MethodId',
    'MethodParams',
    'explain',
    'exact_shapley',
    'get_explainer',
    'list_methods'
]
