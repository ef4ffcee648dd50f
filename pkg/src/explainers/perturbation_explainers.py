"""
Perturbation-family attribution methods.

Features are segments of the request's SegmentMap. A coalition is a boolean
row over segments (True = present); absent segments are filled with the
baseline intensity before scoring. Segment attributions are broadcast back
to every pixel of their segment.
"""
from abc import abstractmethod

import numpy as np
from scipy import linalg
from scipy.special import comb
from sklearn.linear_model import Ridge

from src.explainers.base_explainer import BaseExplainer, ExplainRequest, MethodId
from src.models.base_recognizer import BaseRecognizer
from src.utils.errors import InvalidInputError
from src.utils.imaging import masked_batch
from src.utils.logger import logger
from src.utils.seeding import make_rng

SINGULAR_COND = 1e12
MAX_ENUMERATED_SEGMENTS = 16
KERNELSHAP_RIDGE = 1e-6


class SegmentGame:
    """Value function v(coalition) = score of the image with absent segments masked"""

    def __init__(self, model: BaseRecognizer, req: ExplainRequest, batch_size: int = 256):
        self.model = model
        self.req = req
        self.batch_size = batch_size

    @property
    def n(self) -> int:
        return self.req.segments.segment_count

    def values(self, keep: np.ndarray) -> np.ndarray:
        keep = np.asarray(keep, dtype=bool)
        out = np.empty(len(keep))
        for start in range(0, len(keep), self.batch_size):
            rows = keep[start:start + self.batch_size]
            images = masked_batch(self.req.image, self.req.segments, rows, self.req.baseline)
            out[start:start + len(rows)] = self.model.score_batch(images, self.req.spec)
        return out

    def broadcast(self, segment_values: np.ndarray) -> np.ndarray:
        return np.asarray(segment_values, dtype=np.float64)[self.req.segments.labels]


class PerturbationExplainer(BaseExplainer):
    requires_segments = True

    def attribute(self, model, req: ExplainRequest) -> np.ndarray:
        game = SegmentGame(model, req, self.params.batch_size)
        return game.broadcast(self.segment_attributions(game))

    @abstractmethod
    def segment_attributions(self, game: SegmentGame) -> np.ndarray:
        """One attribution per segment"""


class FeatureAblationExplainer(PerturbationExplainer):
    """phi_i = v(all) - v(all without i)"""
    method_id = MethodId.FEATURE_ABLATION

    def segment_attributions(self, game: SegmentGame) -> np.ndarray:
        n = game.n
        keep = np.ones((n + 1, n), dtype=bool)
        keep[np.arange(1, n + 1), np.arange(n)] = False
        v = game.values(keep)
        return v[0] - v[1:]


class ShapleySamplingExplainer(PerturbationExplainer):
    """Mean marginal contribution over random feature orderings"""
    method_id = MethodId.SHAPLEY_SAMPLING

    def segment_attributions(self, game: SegmentGame) -> np.ndarray:
        n = game.n
        runs = self.params.shapley_permutations
        rng = make_rng(self.params.seed)
        perms = np.stack([rng.permutation(n) for _ in range(runs)])

        # row t of each permutation block holds its first t features
        ranks = np.empty_like(perms)
        ranks[np.arange(runs)[:, None], perms] = np.arange(n)
        steps = np.arange(n + 1)
        keep = ranks[:, None, :] < steps[None, :, None]            # (runs, n+1, n)
        v = game.values(keep.reshape(-1, n)).reshape(runs, n + 1)

        marginals = np.diff(v, axis=1)                              # (runs, n)
        totals = np.bincount(perms.ravel(), weights=marginals.ravel(), minlength=n)
        return totals / runs


def shapley_kernel_weight(n: int, size: np.ndarray) -> np.ndarray:
    """(n-1) / (C(n,|z|) |z| (n-|z|)) for 0 < |z| < n"""
    size = np.asarray(size, dtype=np.float64)
    return (n - 1) / (comb(n, size) * size * (n - size))


def all_coalitions(n: int) -> np.ndarray:
    """(2^n, n) boolean matrix, row m = bits of m"""
    masks = np.arange(2 ** n, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n)) & 1).astype(bool)


class KernelShapExplainer(PerturbationExplainer):
    """
    Shapley-kernel weighted regression with v(empty) as intercept and
    efficiency imposed by eliminating the last coefficient.
    """
    method_id = MethodId.KERNEL_SHAP

    def _sample_coalitions(self, n: int) -> tuple:
        if self.params.kernelshap_full_enumeration:
            if n > MAX_ENUMERATED_SEGMENTS:
                raise InvalidInputError(
                    f"full enumeration supports at most {MAX_ENUMERATED_SEGMENTS} segments, got {n}"
                )
            coalitions = all_coalitions(n)[1:-1]
            return coalitions, shapley_kernel_weight(n, coalitions.sum(axis=1))

        rng = make_rng(self.params.seed)
        sizes = np.arange(1, n)
        size_mass = (n - 1) / (sizes * (n - sizes))
        drawn = rng.choice(sizes, size=self.params.kernelshap_samples, p=size_mass / size_mass.sum())
        coalitions = np.zeros((len(drawn), n), dtype=bool)
        for row, size in enumerate(drawn):
            coalitions[row, rng.permutation(n)[:size]] = True
        # sampling density is proportional to the kernel, so importance weights are uniform
        return coalitions, np.ones(len(drawn))

    def segment_attributions(self, game: SegmentGame) -> np.ndarray:
        n = game.n
        ends = np.vstack([np.zeros(n, dtype=bool), np.ones(n, dtype=bool)])
        v_empty, v_full = game.values(ends)
        delta = v_full - v_empty
        if n == 1:
            return np.array([delta])

        coalitions, weights = self._sample_coalitions(n)
        z = coalitions.astype(np.float64)
        y = game.values(coalitions) - v_empty - z[:, -1] * delta
        X = z[:, :-1] - z[:, -1:]
        gram = X.T @ (weights[:, None] * X)
        rhs = X.T @ (weights * y)
        beta = _solve_normal_equations(gram, rhs)
        return np.append(beta, delta - beta.sum())


def _solve_normal_equations(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    cond = np.linalg.cond(gram)
    if np.isfinite(cond) and cond < SINGULAR_COND:
        try:
            return linalg.solve(gram, rhs, assume_a="pos")
        except linalg.LinAlgError:
            pass
    logger.debug("KernelSHAP normal equations singular, using ridge fallback", cond=float(cond))
    return linalg.solve(gram + KERNELSHAP_RIDGE * np.eye(len(gram)), rhs, assume_a="sym")


class LimeExplainer(PerturbationExplainer):
    """Weighted ridge surrogate over Bernoulli(0.5) segment masks"""
    method_id = MethodId.LIME

    def segment_attributions(self, game: SegmentGame) -> np.ndarray:
        n = game.n
        rng = make_rng(self.params.seed)
        coalitions = rng.random((self.params.lime_samples, n)) < 0.5
        v = game.values(coalitions)
        masked = n - coalitions.sum(axis=1)
        weights = np.exp(-((masked / n) ** 2) / self.params.lime_kernel_width ** 2)
        surrogate = Ridge(alpha=self.params.lime_ridge, fit_intercept=True)
        surrogate.fit(coalitions.astype(np.float64), v, sample_weight=weights)
        return np.asarray(surrogate.coef_, dtype=np.float64)
