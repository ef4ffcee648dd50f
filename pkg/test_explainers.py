"""
Test the attribution methods against constructed models with known answers
"""
import numpy as np
import pytest
from pydantic import ValidationError

from conftest import SegmentValueModel
from src.explainers import (
    AttributionMethod, ExplainRequest, MethodId, MethodParams, exact_shapley, explain, list_methods,
)
from src.models.base_recognizer import NUM_CLASSES, BackwardRule, GlobalScore, LocalScore
from src.models.slot_net import HIDDEN, INPUT_DIM, SlotNet, frozen_prediction
from src.utils.errors import CapabilityError, InvalidInputError, NonFiniteAttributionError
from src.utils.imaging import (
    NUM_SLOTS, SLOT_WIDTH, AttributionMap, grid_segmentation, segment_means, slot_segmentation,
)
from src.utils.seeding import make_rng

ANY_SPEC = LocalScore(0, 0)
GRADIENT_METHODS = [
    MethodId.INTEGRATED_GRADIENTS, MethodId.GRADIENT_SHAP, MethodId.DEEP_LIFT, MethodId.SALIENCY,
    MethodId.INPUT_X_GRADIENT, MethodId.GUIDED_BACKPROP, MethodId.DECONVOLUTION,
]
PERTURBATION_METHODS = [
    MethodId.KERNEL_SHAP, MethodId.FEATURE_ABLATION, MethodId.LIME, MethodId.SHAPLEY_SAMPLING,
]


def run(method_id, model, image, spec=ANY_SPEC, seg=None, baseline=0.0, **params):
    method = AttributionMethod(id=method_id, params=MethodParams(**params))
    return explain(method, model, ExplainRequest(image, spec, seg, baseline)).values


def segment_means_of(values, seg):
    return segment_means(AttributionMap(values), seg).scores


def test_reporting_order():
    methods = list_methods()
    assert len(methods) == 11
    assert methods[0] is MethodId.INTEGRATED_GRADIENTS
    assert methods[-1] is MethodId.SHAPLEY_SAMPLING


def test_params_are_validated():
    with pytest.raises(ValidationError):
        MethodParams(ig_steps=1)
    with pytest.raises(ValidationError):
        MethodParams(lime_samples=0)
    with pytest.raises(ValidationError):
        MethodParams(unknown_knob=3)


class TestLinearEquivalences:
    def test_ig_equals_input_times_gradient_equals_deeplift(self, linear_model, random_image):
        ig = run(MethodId.INTEGRATED_GRADIENTS, linear_model, random_image, ig_steps=8)
        ixg = run(MethodId.INPUT_X_GRADIENT, linear_model, random_image)
        deeplift = run(MethodId.DEEP_LIFT, linear_model, random_image)
        np.testing.assert_allclose(ig, ixg, rtol=0, atol=1e-10)
        np.testing.assert_allclose(deeplift, ixg, rtol=0, atol=1e-10)

    def test_ig_with_nonzero_baseline(self, linear_model, random_image):
        ig = run(MethodId.INTEGRATED_GRADIENTS, linear_model, random_image, baseline=0.5)
        np.testing.assert_allclose(ig, (random_image.data - 0.5) * linear_model.weights, atol=1e-10)

    def test_saliency_is_absolute_gradient(self, linear_model, random_image):
        assert np.array_equal(run(MethodId.SALIENCY, linear_model, random_image), np.abs(linear_model.weights))

    def test_rules_agree_without_relu(self, identity_model, random_image):
        spec = LocalScore(3, 12)
        guided = run(MethodId.GUIDED_BACKPROP, identity_model, random_image, spec)
        deconv = run(MethodId.DECONVOLUTION, identity_model, random_image, spec)
        standard = identity_model.score_gradient(random_image, spec, BackwardRule.standard()).values
        assert np.array_equal(guided, standard)
        assert np.array_equal(deconv, standard)
        np.testing.assert_array_equal(run(MethodId.SALIENCY, identity_model, random_image, spec), np.abs(standard))


def test_ig_completeness(identity_model, random_image):
    spec = GlobalScore((4, 9, 0, 0, 0, 0, 0, 0))
    ig = run(MethodId.INTEGRATED_GRADIENTS, identity_model, random_image, spec, ig_steps=256)
    delta = identity_model.score(random_image, spec) - identity_model.score_batch(
        np.zeros((1,) + random_image.data.shape), spec)[0]
    assert abs(ig.sum() - delta) <= 1e-3 * abs(delta) + 1e-6



def unclipped_relu_model(target: LocalScore) -> SlotNet:
    """ReLU net whose units are all active and whose incoming gradient is non-negative for `target`"""
    rng = make_rng(17)
    W2 = np.zeros((NUM_SLOTS, NUM_CLASSES, HIDDEN))
    W2[target.slot, target.target_class] = rng.uniform(0.0005, 0.002, size=HIDDEN)
    return SlotNet(
        W1=rng.normal(0.0, 0.01, size=(HIDDEN, INPUT_DIM)),
        b1=np.full(HIDDEN, 5.0),
        W2=W2,
        b2=np.zeros((NUM_SLOTS, NUM_CLASSES)),
    )


def test_rules_agree_on_unclipped_relu(random_image):
    spec = LocalScore(2, 7)
    model = unclipped_relu_model(spec)
    assert np.all(model.forward_trace(random_image.data).pre > 0.0)
    standard = model.score_gradient(random_image, spec, BackwardRule.standard()).values
    assert np.any(standard != 0.0)
    assert np.array_equal(run(MethodId.GUIDED_BACKPROP, model, random_image, spec), standard)
    assert np.array_equal(run(MethodId.DECONVOLUTION, model, random_image, spec), standard)


@pytest.mark.parametrize("steps", [256, 1024])
def test_ig_completeness_across_relu_kinks(slot_local_model, random_image, steps):
    # nonzero hidden biases: units switch on or off along the path
    spec = frozen_prediction(slot_local_model, random_image)
    ig = run(MethodId.INTEGRATED_GRADIENTS, slot_local_model, random_image, spec, ig_steps=steps)
    delta = slot_local_model.score(random_image, spec) - slot_local_model.score_batch(
        np.zeros((1,) + random_image.data.shape), spec)[0]
    assert abs(ig.sum() - delta) <= 4.0 / steps


class TestShapleyOracle:
    def test_axioms(self, interaction_game, ones_image, slots):
        phi = exact_shapley(interaction_game, ExplainRequest(ones_image, ANY_SPEC, slots)).scores
        full = interaction_game.score_batch(ones_image.data[None], ANY_SPEC)[0]
        assert phi.sum() == pytest.approx(full, abs=1e-9)                   # efficiency, v(empty) = 0
        assert phi[2] == pytest.approx(phi[3], abs=1e-9)                     # symmetry
        assert phi[7] == pytest.approx(0.0, abs=1e-9)                        # dummy
        assert phi[0] == pytest.approx(0.5 + 0.1, abs=1e-9)
        assert phi[1] == pytest.approx(-0.2 + 0.1, abs=1e-9)

    def test_too_many_segments(self, interaction_game, ones_image):
        with pytest.raises(InvalidInputError):
            exact_shapley(interaction_game, ExplainRequest(ones_image, ANY_SPEC, grid_segmentation(cell=8)))

    def test_needs_segments(self, interaction_game, ones_image):
        with pytest.raises(CapabilityError):
            exact_shapley(interaction_game, ExplainRequest(ones_image, ANY_SPEC))


class TestPerturbationEstimators:
    @pytest.fixture
    def exact(self, interaction_game, ones_image, slots):
        return exact_shapley(interaction_game, ExplainRequest(ones_image, ANY_SPEC, slots)).scores

    def test_kernel_shap_full_enumeration_matches_oracle(self, interaction_game, ones_image, slots, exact):
        values = run(MethodId.KERNEL_SHAP, interaction_game, ones_image, seg=slots, kernelshap_full_enumeration=True)
        np.testing.assert_allclose(segment_means_of(values, slots), exact, atol=1e-6)

    def test_kernel_shap_sampling_is_efficient(self, interaction_game, ones_image, slots):
        values = run(MethodId.KERNEL_SHAP, interaction_game, ones_image, seg=slots, kernelshap_samples=200)
        full = interaction_game.score_batch(ones_image.data[None], ANY_SPEC)[0]
        assert segment_means_of(values, slots).sum() == pytest.approx(full, abs=1e-9)

    def test_kernel_shap_enumeration_limit(self, interaction_game, ones_image):
        with pytest.raises(InvalidInputError):
            run(MethodId.KERNEL_SHAP, interaction_game, ones_image, seg=grid_segmentation(cell=8),
                kernelshap_full_enumeration=True)

    def test_shapley_sampling_matches_oracle(self, interaction_game, ones_image, slots, exact):
        values = segment_means_of(
            run(MethodId.SHAPLEY_SAMPLING, interaction_game, ones_image, seg=slots, shapley_permutations=2000), slots
        )
        assert np.max(np.abs(values - exact)) <= 0.02 * np.ptp(exact)
        assert values.sum() == pytest.approx(exact.sum(), abs=1e-9)

    def test_feature_ablation(self, interaction_game, ones_image, slots):
        values = segment_means_of(run(MethodId.FEATURE_ABLATION, interaction_game, ones_image, seg=slots), slots)
        expected = np.array([0.7, 0.0, 0.3, 0.3, 0.1, -0.4, 0.05, 0.0])
        np.testing.assert_allclose(values, expected, atol=1e-12)

    def test_lime_recovers_additive_game(self, ones_image, slots):
        a = np.array([0.4, -0.3, 0.2, 0.0, 0.1, 0.6, -0.1, 0.05])
        game = SegmentValueModel(slots, lambda z: z @ a)
        values = segment_means_of(run(MethodId.LIME, game, ones_image, seg=slots), slots)
        np.testing.assert_allclose(values, a, atol=1e-2)

    def test_attributions_are_segment_constant(self, interaction_game, ones_image, slots):
        values = run(MethodId.FEATURE_ABLATION, interaction_game, ones_image, seg=slots)
        for k in range(8):
            band = values[:, k * SLOT_WIDTH:(k + 1) * SLOT_WIDTH]
            assert np.all(band == band[0, 0])


@pytest.mark.parametrize("method_id", list(MethodId))
def test_constant_model_gives_zero_map(method_id, zero_model, random_image):
    values = run(method_id, zero_model, random_image, GlobalScore((0,) * 8), seg=grid_segmentation(cell=16),
                 kernelshap_samples=64, lime_samples=64, shapley_permutations=4, ig_steps=4, gradshap_samples=4)
    np.testing.assert_allclose(values, 0.0, atol=1e-12)


@pytest.mark.parametrize("method_id", [MethodId.GRADIENT_SHAP, MethodId.LIME, MethodId.KERNEL_SHAP])
def test_seeded_methods_are_reproducible(method_id, random_model, random_image):
    seg = grid_segmentation(cell=16)
    kwargs = dict(kernelshap_samples=60, lime_samples=60, gradshap_samples=4)
    a = run(method_id, random_model, random_image, seg=seg, seed=1, **kwargs)
    b = run(method_id, random_model, random_image, seg=seg, seed=1, **kwargs)
    c = run(method_id, random_model, random_image, seg=seg, seed=2, **kwargs)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


class TestLocality:
    def test_local_saliency_stays_in_its_band(self, slot_local_model, random_image):
        for slot in (0, 3, 7):
            values = run(MethodId.SALIENCY, slot_local_model, random_image, LocalScore(slot, 5))
            outside = np.ones(values.shape, dtype=bool)
            outside[:, slot * SLOT_WIDTH:(slot + 1) * SLOT_WIDTH] = False
            assert np.all(values[outside] == 0.0)
            assert values[~outside].max() > 0.0

    def test_local_ablation_ignores_other_slots(self, slot_local_model, random_image):
        seg = slot_segmentation()
        values = segment_means_of(run(MethodId.FEATURE_ABLATION, slot_local_model, random_image, LocalScore(2, 9),
                                      seg=seg), seg)
        np.testing.assert_allclose(np.delete(values, 2), 0.0, atol=1e-12)
        assert values[2] != 0.0


class TestCapabilities:
    @pytest.mark.parametrize("method_id", GRADIENT_METHODS)
    def test_gradient_methods_need_gradients(self, method_id, random_model, random_image):
        with pytest.raises(CapabilityError):
            run(method_id, random_model.without_gradients(), random_image)

    @pytest.mark.parametrize("method_id", PERTURBATION_METHODS)
    def test_perturbation_methods_need_segments(self, method_id, random_model, random_image):
        with pytest.raises(CapabilityError):
            run(method_id, random_model, random_image)

    def test_perturbation_methods_work_without_gradients(self, random_model, random_image):
        values = run(MethodId.FEATURE_ABLATION, random_model.without_gradients(), random_image,
                     seg=grid_segmentation(cell=16))
        assert values.shape == random_image.data.shape

    def test_non_finite_scores_are_rejected(self, ones_image, slots):
        game = SegmentValueModel(slots, lambda z: np.full(len(z), np.nan))
        with pytest.raises(NonFiniteAttributionError):
            run(MethodId.FEATURE_ABLATION, game, ones_image, seg=slots)
