"""
Selectivity metrics: performance functions, curve areas, aggregation
"""
import math
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import trapezoid


class MetricsCalculator:
    """Calculate per-step performance values and selectivity areas"""

    @staticmethod
    def exact_match(predicted: Sequence[str], label: str) -> np.ndarray:
        """
        Accuracy per prediction (1.0 or 0.0)

        Args:
            predicted: Decoded strings, one per removal step
            label: Ground-truth text

        Returns:
            Float vector of hits
        """
        return np.array([1.0 if text == label else 0.0 for text in predicted])

    @staticmethod
    def area_under_curve(xs: Sequence[float], ys: Sequence[float]) -> float:
        """
        Trapezoidal area under a performance-vs-removal curve

        Args:
            xs: Removal fractions, strictly increasing from 0 to 1
            ys: Performance values in [0, 1]

        Returns:
            Area in [0, 1]
        """
        return float(trapezoid(np.asarray(ys, dtype=np.float64), np.asarray(xs, dtype=np.float64)))

    @staticmethod
    def mean(values: Iterable[float]) -> float:
        """Order-independent arithmetic mean (compensated summation)"""
        values = [float(v) for v in values]
        if not values:
            raise ValueError("mean of an empty sequence")
        return math.fsum(values) / len(values)


# Convenience functions
def selectivity_area(xs: Sequence[float], ys: Sequence[float]) -> float:
    return MetricsCalculator.area_under_curve(xs, ys)


def mean_area(areas: Iterable[float]) -> float:
    return MetricsCalculator.mean(areas)
