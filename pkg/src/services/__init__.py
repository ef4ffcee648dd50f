"""
Services package - datasets, selectivity evaluation and combined explanations
"""
from src.services.dataset_service import (
    DatasetService, DatasetSpec, Sample, Variant, generate_dataset, load_dataset, save_dataset,
)
from src.services.selectivity_service import (
    Metric, MethodRanking, SelectivityCurve, SelectivityService, dataset_selectivity, query_best, selectivity_auc,
    selectivity_curve,
)
from src.services.strexp_service import StrExpConfig, StrExpResult, StrExpService, strexp_explain

__all__ = [
    'DatasetService',
    'DatasetSpec',
    'Sample',
    'Variant',
    'generate_dataset',
    'load_dataset',
    'save_dataset',
    'Metric',
    'MethodRanking',
    'SelectivityCurve',
    'SelectivityService',
    'dataset_selectivity',
    'query_best',
    'selectivity_auc',
    'selectivity_curve',
    'StrExpConfig',
    'StrExpResult',
    'StrExpService',
    'strexp_explain'
]
