"""
Selectivity Service - deletion curves, their areas, and the best-method query

Segments are removed cumulatively in descending order of their mean
attribution (ties: lower segment id first). After each removal the model is
re-run and a performance value recorded; the area under that curve is the
selectivity, lower is better.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from src.explainers.base_explainer import AttributionMethod, MethodId, MethodParams
from src.explainers.registry import list_methods
from src.models.slot_net import SlotNet, decode_classes, frozen_prediction
from src.services.dataset_service import Sample
from src.services.strexp_service import StrExpService
from src.utils.errors import DimensionError, InvalidInputError
from src.utils.imaging import AttributionMap, SegmentMap, masked_batch, segment_means
from src.utils.logger import logger
from src.utils.metrics import MetricsCalculator, mean_area, selectivity_area
from src.utils.parallel import parallel_map
from src.utils.seeding import derive_seed


class Metric(str, Enum):
    ACCURACY = "accuracy"
    CONFIDENCE = "confidence"


@dataclass(frozen=True, eq=False)
class SelectivityCurve:
    xs: np.ndarray
    ys: np.ndarray
    auc: float
    metric: Metric

    def to_dict(self) -> dict:
        return {"xs": self.xs.tolist(), "ys": self.ys.tolist(), "auc": self.auc}


@dataclass(frozen=True)
class MethodRanking:
    """Aggregate AUC per method and the minimizing method"""
    scores: Dict[MethodId, float]
    best: MethodId


AttributionSource = Union[Sequence[AttributionMap], Callable[[int, Sample], AttributionMap]]


def removal_order(attr: AttributionMap, seg: SegmentMap) -> np.ndarray:
    """Segment ids by descending mean attribution, ties to the lower id"""
    scores = segment_means(attr, seg).scores
    ids = np.arange(len(scores))
    return np.lexsort((ids, -scores))


def selectivity_auc(curve: SelectivityCurve) -> float:
    return selectivity_area(curve.xs, curve.ys)


def seeded_method(method: AttributionMethod, index: int) -> AttributionMethod:
    """Same method with the sampling seed derived for image `index`"""
    params = method.params.model_copy(update={"seed": derive_seed(method.params.seed, index)})
    return AttributionMethod(id=method.id, params=params)


def rank_methods(scores: Mapping[MethodId, float]) -> MethodRanking:
    """Lowest aggregate wins; ties go to the earlier method in reporting order"""
    if not scores:
        raise InvalidInputError("cannot rank an empty set of methods")
    position = {method: i for i, method in enumerate(list_methods())}
    ordered = sorted(scores, key=lambda m: position[MethodId(m)])
    best = min(ordered, key=lambda m: scores[m])
    return MethodRanking(scores={MethodId(m): float(scores[m]) for m in ordered}, best=MethodId(best))


class SelectivityService:
    """Deletion curves for one model, segmentation and removal baseline"""

    def __init__(self, model: SlotNet, seg: SegmentMap, baseline: float = 0.0):
        self.model = model
        self.seg = seg
        self.baseline = baseline

    def curve(self, sample: Sample, attr: AttributionMap, metric: Metric = Metric.CONFIDENCE) -> SelectivityCurve:
        """
        Performance after removing the top-t segments, t = 0..m

        Accuracy: exact match of the decoded prediction with the ground truth.
        Confidence: global score targeting the prediction on the unperturbed image.
        """
        seg = self.seg
        if attr.shape != seg.shape or sample.image.data.shape != seg.shape:
            raise DimensionError("image, attribution and segmentation dims must agree")
        metric = Metric(metric)
        m = seg.segment_count
        order = removal_order(attr, seg)
        removed_at = np.empty(m, dtype=np.int64)
        removed_at[order] = np.arange(m)
        keep = removed_at[None, :] >= np.arange(m + 1)[:, None]        # row t: top-t removed
        images = masked_batch(sample.image, seg, keep, self.baseline)

        if metric is Metric.ACCURACY:
            texts = [decode_classes(row) for row in self.model.predict_batch(images)]
            ys = MetricsCalculator.exact_match(texts, sample.label)
        else:
            ys = self.model.score_batch(images, frozen_prediction(self.model, sample.image))
        xs = np.arange(m + 1) / m
        return SelectivityCurve(xs=xs, ys=np.asarray(ys, dtype=np.float64), auc=selectivity_area(xs, ys), metric=metric)

    def global_attributions(self, samples: Sequence[Sample], method: AttributionMethod) -> List[AttributionMap]:
        """Global explanation of every sample, image i seeded by (seed, i)"""
        explainer = StrExpService(self.model, self.seg, self.baseline)

        def run(index: int) -> AttributionMap:
            return explainer.global_explanation(samples[index].image, seeded_method(method, index))

        return parallel_map(run, range(len(samples)))

    def dataset_curves(
        self,
        samples: Sequence[Sample],
        attributions: AttributionSource,
        metric: Metric = Metric.CONFIDENCE,
    ) -> List[SelectivityCurve]:
        if not samples:
            raise InvalidInputError("selectivity needs a non-empty dataset")
        if not callable(attributions) and len(attributions) != len(samples):
            raise DimensionError(f"{len(attributions)} attribution maps for {len(samples)} samples")

        def run(index: int) -> SelectivityCurve:
            sample = samples[index]
            attr = attributions(index, sample) if callable(attributions) else attributions[index]
            return self.curve(sample, attr, metric)

        return parallel_map(run, range(len(samples)))

    def dataset_selectivity(
        self,
        samples: Sequence[Sample],
        attributions: AttributionSource,
        metric: Metric = Metric.CONFIDENCE,
    ) -> float:
        """Arithmetic mean of per-image AUCs"""
        return mean_area(c.auc for c in self.dataset_curves(samples, attributions, metric))

    def query_best(
        self,
        calibration: Sequence[Sample],
        methods: Sequence[MethodId],
        metric: Metric = Metric.CONFIDENCE,
        params: Optional[MethodParams] = None,
    ) -> MethodRanking:
        """Mean selectivity of each method's global explanations; minimal wins"""
        if not methods:
            raise InvalidInputError("query_best needs at least one method")
        if not calibration:
            raise InvalidInputError("query_best needs a non-empty calibration dataset")
        params = params or MethodParams()
        scores = {}
        for method_id in methods:
            method = AttributionMethod(id=method_id, params=params)
            maps = self.global_attributions(calibration, method)
            scores[MethodId(method_id)] = self.dataset_selectivity(calibration, maps, metric)
            logger.info("Method scored", method=MethodId(method_id).value, metric=Metric(metric).value,
                        selectivity=scores[MethodId(method_id)])
        ranking = rank_methods(scores)
        logger.info("Best method queried", best=ranking.best.value)
        return ranking


# Convenience functions

def selectivity_curve(
    model: SlotNet,
    sample: Sample,
    attr: AttributionMap,
    seg: SegmentMap,
    baseline: float = 0.0,
    metric: Metric = Metric.CONFIDENCE,
) -> SelectivityCurve:
    return SelectivityService(model, seg, baseline).curve(sample, attr, metric)


def global_attributions(
    model: SlotNet,
    samples: Sequence[Sample],
    method: AttributionMethod,
    seg: SegmentMap,
    baseline: float = 0.0,
) -> List[AttributionMap]:
    return SelectivityService(model, seg, baseline).global_attributions(samples, method)


def dataset_curves(
    model: SlotNet,
    samples: Sequence[Sample],
    attributions: AttributionSource,
    seg: SegmentMap,
    baseline: float = 0.0,
    metric: Metric = Metric.CONFIDENCE,
) -> List[SelectivityCurve]:
    return SelectivityService(model, seg, baseline).dataset_curves(samples, attributions, metric)


def dataset_selectivity(
    model: SlotNet,
    samples: Sequence[Sample],
    attributions: AttributionSource,
    seg: SegmentMap,
    baseline: float = 0.0,
    metric: Metric = Metric.CONFIDENCE,
) -> float:
    return SelectivityService(model, seg, baseline).dataset_selectivity(samples, attributions, metric)


def query_best(
    model: SlotNet,
    calibration: Sequence[Sample],
    methods: Sequence[MethodId],
    seg: SegmentMap,
    baseline: float = 0.0,
    metric: Metric = Metric.CONFIDENCE,
    params: Optional[MethodParams] = None,
) -> MethodRanking:
    return SelectivityService(model, seg, baseline).query_best(calibration, methods, metric, params)
