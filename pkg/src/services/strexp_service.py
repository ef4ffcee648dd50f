"""
StrExp Service - global and per-character explanations and their combination

The global map explains the sequence-level confidence of the model's own
prediction. Local maps explain each predicted character's probability at
its slot. The final map is the equal-weight mean of the (optionally L∞
normalized) local maps, plus the global map in GL mode.
"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.explainers.base_explainer import AttributionMethod, ExplainRequest, MethodId, MethodParams
from src.explainers.registry import explain, list_methods
from src.models.base_recognizer import BLANK, LocalScore
from src.models.slot_net import SlotNet, class_to_char, frozen_prediction
from src.utils.errors import DimensionError, InvalidInputError
from src.utils.imaging import NUM_SLOTS, AttributionMap, Image, SegmentMap
from src.utils.logger import logger

AUTO = "auto"
ZERO_MAP_THRESHOLD = 1e-12


class StrExpMode(str, Enum):
    GL = "GL"       # global + local
    L = "L"         # local only


class Normalization(str, Enum):
    LINF = "linf"
    NONE = "none"


class StrExpConfig(BaseModel):
    """How to build the combined explanation"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: StrExpMode = StrExpMode.GL
    base_method: Union[MethodId, Literal["auto"]] = AUTO
    normalization: Normalization = Normalization.LINF
    include_blank_slots: bool = False


@dataclass(frozen=True)
class LocalExplanation:
    slot: int
    target_class: int
    char: str
    attribution: AttributionMap


@dataclass(frozen=True)
class StrExpResult:
    final: AttributionMap
    global_map: Optional[AttributionMap]
    locals: List[LocalExplanation]
    base_method: MethodId
    mode: StrExpMode


def explained_slots(predicted: Sequence[int], include_blank_slots: bool = False) -> List[int]:
    """Slots with a non-blank predicted class; every slot when asked to or when nothing was predicted"""
    if include_blank_slots:
        return list(range(NUM_SLOTS))
    slots = [k for k, c in enumerate(predicted) if int(c) != BLANK]
    return slots or list(range(NUM_SLOTS))


def _normalized(attr: AttributionMap, normalization: Normalization) -> np.ndarray:
    if normalization is Normalization.NONE:
        return attr.values
    peak = attr.max_abs()
    if peak < ZERO_MAP_THRESHOLD:
        return np.zeros_like(attr.values)
    return attr.values / peak


def combine(
    global_map: Optional[AttributionMap],
    locals_: Sequence[AttributionMap],
    normalization: Union[Normalization, str] = Normalization.LINF,
) -> AttributionMap:
    """
    Pixel-wise mean of the component maps

    Args:
        global_map: included as one component when given (GL mode)
        locals_: local maps
        normalization: linf divides each component by its max |value|

    Returns:
        Combined attribution map
    """
    normalization = Normalization(normalization)
    components = ([global_map] if global_map is not None else []) + list(locals_)
    if not components:
        raise InvalidInputError("combine needs at least one component map")
    shape = components[0].shape
    for attr in components[1:]:
        if attr.shape != shape:
            raise DimensionError(f"component map {attr.shape} does not match {shape}")
    stacked = np.stack([_normalized(attr, normalization) for attr in components])
    return AttributionMap(stacked.mean(axis=0))


class StrExpService:
    """Global, per-character and combined explanations for one model"""

    def __init__(
        self,
        model: SlotNet,
        seg: Optional[SegmentMap] = None,
        baseline: float = 0.0,
        params: Optional[MethodParams] = None,
    ):
        self.model = model
        self.seg = seg
        self.baseline = baseline
        self.params = params or MethodParams()

    def _request(self, img: Image, spec) -> ExplainRequest:
        return ExplainRequest(image=img, spec=spec, segments=self.seg, baseline=self.baseline)

    def global_explanation(self, img: Image, method: AttributionMethod) -> AttributionMap:
        """Attribution of the mean confidence of the frozen prediction"""
        return explain(method, self.model, self._request(img, frozen_prediction(self.model, img)))

    def local_explanations(
        self,
        img: Image,
        method: AttributionMethod,
        include_blank_slots: bool = False,
    ) -> List[LocalExplanation]:
        """One map per explained slot, ordered by slot index"""
        predicted = self.model.predict(img)
        results = []
        for slot in explained_slots(predicted, include_blank_slots):
            target = int(predicted[slot])
            results.append(LocalExplanation(
                slot=slot,
                target_class=target,
                char=class_to_char(target),
                attribution=explain(method, self.model, self._request(img, LocalScore(slot, target))),
            ))
        return results

    def combined_maps(
        self,
        img: Image,
        method: AttributionMethod,
        cfg: StrExpConfig = StrExpConfig(),
    ) -> Tuple[AttributionMap, AttributionMap]:
        """GL and L final maps built from one shared set of local maps"""
        global_map = self.global_explanation(img, method)
        locals_ = [item.attribution for item in self.local_explanations(img, method, cfg.include_blank_slots)]
        return combine(global_map, locals_, cfg.normalization), combine(None, locals_, cfg.normalization)

    def resolve_base_method(
        self,
        cfg: StrExpConfig,
        calibration: Optional[Sequence] = None,
        methods: Optional[Sequence[MethodId]] = None,
    ) -> MethodId:
        """The configured method, or the best one on the calibration set when auto"""
        if cfg.base_method != AUTO:
            return MethodId(cfg.base_method)
        if not calibration:
            raise InvalidInputError("base_method=auto requires a calibration dataset")
        from src.services.selectivity_service import Metric, SelectivityService

        ranking = SelectivityService(self.model, self.seg, self.baseline).query_best(
            calibration, methods or list_methods(), Metric.CONFIDENCE, self.params
        )
        return ranking.best

    def explain(
        self,
        img: Image,
        cfg: StrExpConfig = StrExpConfig(),
        calibration: Optional[Sequence] = None,
    ) -> StrExpResult:
        """Resolve the base method, explain globally (GL) and per character, then combine"""
        base = self.resolve_base_method(cfg, calibration)
        method = AttributionMethod(id=base, params=self.params)

        global_map = None
        if cfg.mode is StrExpMode.GL:
            global_map = self.global_explanation(img, method)
        locals_ = self.local_explanations(img, method, cfg.include_blank_slots)
        final = combine(global_map, [item.attribution for item in locals_], cfg.normalization)
        logger.debug("StrExp explanation computed", mode=cfg.mode.value, base_method=base.value, slots=len(locals_))
        return StrExpResult(final=final, global_map=global_map, locals=locals_, base_method=base, mode=cfg.mode)


# Convenience functions

def global_explanation(
    model: SlotNet,
    img: Image,
    method: AttributionMethod,
    seg: Optional[SegmentMap] = None,
    baseline: float = 0.0,
) -> AttributionMap:
    return StrExpService(model, seg, baseline).global_explanation(img, method)


def local_explanations(
    model: SlotNet,
    img: Image,
    method: AttributionMethod,
    seg: Optional[SegmentMap] = None,
    baseline: float = 0.0,
    include_blank_slots: bool = False,
) -> List[LocalExplanation]:
    return StrExpService(model, seg, baseline).local_explanations(img, method, include_blank_slots)


def resolve_base_method(
    model: SlotNet,
    cfg: StrExpConfig,
    seg: Optional[SegmentMap],
    baseline: float = 0.0,
    params: Optional[MethodParams] = None,
    calibration: Optional[Sequence] = None,
    methods: Optional[Sequence[MethodId]] = None,
) -> MethodId:
    return StrExpService(model, seg, baseline, params).resolve_base_method(cfg, calibration, methods)


def strexp_explain(
    model: SlotNet,
    img: Image,
    cfg: StrExpConfig = StrExpConfig(),
    seg: Optional[SegmentMap] = None,
    baseline: float = 0.0,
    params: Optional[MethodParams] = None,
    calibration: Optional[Sequence] = None,
) -> StrExpResult:
    return StrExpService(model, seg, baseline, params).explain(img, cfg, calibration)
