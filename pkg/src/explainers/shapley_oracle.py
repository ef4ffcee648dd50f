"""
Exact Shapley values by enumerating every coalition of segments.

Exponential in the segment count; used as a test oracle for the sampling
and regression estimators.
"""
import numpy as np
from scipy.special import comb

from src.explainers.base_explainer import ExplainRequest
from src.explainers.perturbation_explainers import MAX_ENUMERATED_SEGMENTS, SegmentGame, all_coalitions
from src.models.base_recognizer import BaseRecognizer
from src.utils.errors import CapabilityError, InvalidInputError
from src.utils.imaging import SegmentScores


def exact_shapley(model: BaseRecognizer, req: ExplainRequest, batch_size: int = 256) -> SegmentScores:
    """phi_i = sum over S not containing i of |S|!(n-|S|-1)!/n! * (v(S+i) - v(S))"""
    if req.segments is None:
        raise CapabilityError("exact Shapley values need a segment map")
    n = req.segments.segment_count
    if n > MAX_ENUMERATED_SEGMENTS:
        raise InvalidInputError(f"exact Shapley supports at most {MAX_ENUMERATED_SEGMENTS} segments, got {n}")

    coalitions = all_coalitions(n)
    v = SegmentGame(model, req, batch_size).values(coalitions)
    sizes = coalitions.sum(axis=1)
    masks = np.arange(2 ** n, dtype=np.int64)

    phi = np.empty(n)
    for i in range(n):
        without = ~coalitions[:, i]
        s = sizes[without]
        weights = 1.0 / (n * comb(n - 1, s))
        phi[i] = np.sum(weights * (v[masks[without] | (1 << i)] - v[without]))
    return SegmentScores(phi)
