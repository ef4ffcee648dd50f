"""
Gradient-family attribution methods: every map is built from input
gradients of the requested score, possibly under a modified ReLU rule.
"""
import numpy as np

from src.explainers.base_explainer import BaseExplainer, ExplainRequest, MethodId
from src.models.base_recognizer import BackwardRule, BaseRecognizer, ScoreSpec
from src.utils.seeding import make_rng


class GradientExplainer(BaseExplainer):
    requires_gradients = True

    def _gradients(
        self,
        model: BaseRecognizer,
        points: np.ndarray,
        spec: ScoreSpec,
        rule: BackwardRule = BackwardRule(),
    ) -> np.ndarray:
        """Gradients at (N, H, W) points, evaluated in chunks"""
        chunk = self.params.batch_size
        parts = [
            model.score_gradient_batch(points[i:i + chunk], spec, rule)
            for i in range(0, len(points), chunk)
        ]
        return np.concatenate(parts, axis=0)


class SaliencyExplainer(GradientExplainer):
    method_id = MethodId.SALIENCY

    def attribute(self, model, req: ExplainRequest) -> np.ndarray:
        return np.abs(self._gradients(model, req.image.data[None], req.spec)[0])


class InputXGradientExplainer(GradientExplainer):
    method_id = MethodId.INPUT_X_GRADIENT

    def attribute(self, model, req: ExplainRequest) -> np.ndarray:
        x = req.image.data
        return x * self._gradients(model, x[None], req.spec)[0]


class IntegratedGradientsExplainer(GradientExplainer):
    """Midpoint Riemann sum along the straight path from the baseline"""
    method_id = MethodId.INTEGRATED_GRADIENTS

    def attribute(self, model, req: ExplainRequest) -> np.ndarray:
        x, x0 = req.image.data, req.baseline_array()
        steps = self.params.ig_steps
        alphas = (np.arange(steps) + 0.5) / steps
        points = x0[None] + alphas[:, None, None] * (x - x0)[None]
        avg_grad = self._gradients(model, points, req.spec).mean(axis=0)
        return (x - x0) * avg_grad


class GradientShapExplainer(GradientExplainer):
    """Expected gradients over noisy baselines and random path positions"""
    method_id = MethodId.GRADIENT_SHAP

    def attribute(self, model, req: ExplainRequest) -> np.ndarray:
        x, x0 = req.image.data, req.baseline_array()
        n = self.params.gradshap_samples
        rng = make_rng(self.params.seed)
        noise = rng.normal(0.0, self.params.gradshap_stdev, size=(n,) + x.shape)
        baselines = np.clip(x0[None] + noise, 0.0, 1.0)
        alphas = rng.random(n)[:, None, None]
        points = baselines + alphas * (x[None] - baselines)
        grads = self._gradients(model, points, req.spec)
        return ((x[None] - baselines) * grads).mean(axis=0)


class GuidedBackpropExplainer(GradientExplainer):
    method_id = MethodId.GUIDED_BACKPROP

    def attribute(self, model, req: ExplainRequest) -> np.ndarray:
        return self._gradients(model, req.image.data[None], req.spec, BackwardRule.guided())[0]


class DeconvolutionExplainer(GradientExplainer):
    method_id = MethodId.DECONVOLUTION

    def attribute(self, model, req: ExplainRequest) -> np.ndarray:
        return self._gradients(model, req.image.data[None], req.spec, BackwardRule.deconv())[0]


class DeepLiftExplainer(GradientExplainer):
    """Rescale rule multipliers against the baseline trace, times (x - x0)"""
    method_id = MethodId.DEEP_LIFT

    def attribute(self, model, req: ExplainRequest) -> np.ndarray:
        x, x0 = req.image.data, req.baseline_array()
        rule = BackwardRule.deeplift_rescale(model.forward_trace(x0))
        multipliers = self._gradients(model, x[None], req.spec, rule)[0]
        return (x - x0) * multipliers
