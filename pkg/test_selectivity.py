"""
Test selectivity curves, their areas, dataset aggregation and the best-method query
"""
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from src.config.settings import settings
from src.explainers import AttributionMethod, ExplainRequest, MethodId, explain
from src.models.base_recognizer import NUM_CLASSES
from src.models.slot_net import SlotNet, frozen_prediction, label_to_slots
from src.services.dataset_service import Sample
from src.services.selectivity_service import (
    Metric, SelectivityCurve, SelectivityService, dataset_curves, dataset_selectivity, global_attributions, query_best,
    rank_methods, removal_order, selectivity_auc, selectivity_curve,
)
from src.utils.errors import DimensionError, InvalidInputError
from src.utils.imaging import (
    NUM_SLOTS, AttributionMap, Image, SegmentScores, grid_segmentation, mask_segments, segment_means,
)
from src.utils.seeding import make_rng


def curve(ys) -> SelectivityCurve:
    ys = np.asarray(ys, dtype=float)
    xs = np.arange(len(ys)) / (len(ys) - 1)
    return SelectivityCurve(xs=xs, ys=ys, auc=0.0, metric=Metric.CONFIDENCE)


class TestArea:
    def test_constant_one(self):
        assert selectivity_auc(curve([1.0] * 9)) == pytest.approx(1.0, abs=1e-12)

    def test_linear_decay(self):
        assert selectivity_auc(curve(np.linspace(1.0, 0.0, 65))) == pytest.approx(0.5, abs=1e-12)

    def test_single_drop(self):
        assert selectivity_auc(curve([1, 0, 0, 0, 0])) == pytest.approx(0.125, abs=1e-12)


def random_map(seed: int) -> AttributionMap:
    return AttributionMap(make_rng(seed).normal(size=(32, 128)))


class TestCurve:
    seg = grid_segmentation(cell=16)

    def test_constant_model(self, zero_model, clean_samples):
        result = selectivity_curve(zero_model, clean_samples[0], random_map(0), self.seg)
        assert np.all(result.ys == result.ys[0])
        assert result.auc == pytest.approx(result.ys[0], abs=1e-12)

    def test_axis(self, random_model, clean_samples):
        result = selectivity_curve(random_model, clean_samples[0], random_map(1), self.seg)
        m = self.seg.segment_count
        assert len(result.xs) == m + 1
        assert result.xs[0] == 0.0 and result.xs[-1] == 1.0
        assert np.all(np.diff(result.xs) > 0)

    def test_endpoints(self, random_model, clean_samples):
        sample = clean_samples[1]
        result = selectivity_curve(random_model, sample, random_map(2), self.seg, baseline=0.0)
        spec = frozen_prediction(random_model, sample.image)
        assert result.ys[0] == pytest.approx(random_model.score(sample.image, spec), abs=1e-12)
        assert result.ys[-1] == pytest.approx(random_model.score(Image.filled(0.0), spec), abs=1e-12)

    def test_matches_step_by_step_resimulation(self, random_model, clean_samples):
        sample, attr = clean_samples[2], random_map(3)
        result = selectivity_curve(random_model, sample, attr, self.seg, baseline=0.2)
        spec = frozen_prediction(random_model, sample.image)

        scores = segment_means(attr, self.seg).scores
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
        expected = []
        for t in range(len(order) + 1):
            masked = mask_segments(sample.image, self.seg, order[:t], baseline=0.2)
            expected.append(random_model.score(masked, spec))
        np.testing.assert_allclose(result.ys, expected, rtol=0, atol=1e-12)

    def test_ties_remove_lower_ids_first(self):
        assert removal_order(AttributionMap.zeros(), self.seg).tolist() == list(range(self.seg.segment_count))

    def test_dimension_mismatch(self, random_model, clean_samples):
        with pytest.raises(DimensionError):
            selectivity_curve(random_model, clean_samples[0], AttributionMap(np.zeros((16, 16))), self.seg)

    def test_accuracy_metric(self, clean_samples):
        sample = clean_samples[0]
        b2 = np.zeros((NUM_SLOTS, NUM_CLASSES))
        b2[np.arange(NUM_SLOTS), label_to_slots(sample.label)] = 5.0
        reader = replace(SlotNet.zeros(), b2=b2)
        result = selectivity_curve(reader, sample, random_map(4), self.seg, metric=Metric.ACCURACY)
        assert np.all(result.ys == 1.0)
        assert result.auc == pytest.approx(1.0)

    def test_auc_in_unit_interval(self, random_model, clean_samples):
        for metric in Metric:
            result = selectivity_curve(random_model, clean_samples[3], random_map(5), self.seg, metric=metric)
            assert 0.0 <= result.auc <= 1.0


@hyp_settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_curve_invariant_under_monotone_transform(seed):
    model = SlotNet.initialize(seed=3)
    seg = grid_segmentation(cell=16)
    sample = Sample(image=Image(make_rng(seed, 1).random((32, 128))), label="a", slot_boxes=((9, 3, 23, 13),))
    scores = make_rng(seed).normal(size=seg.segment_count)
    attr = AttributionMap.from_segment_scores(SegmentScores(scores), seg)
    transformed = AttributionMap.from_segment_scores(SegmentScores(3.0 * np.exp(scores) + 1.0), seg)
    a = selectivity_curve(model, sample, attr, seg)
    b = selectivity_curve(model, sample, transformed, seg)
    assert np.array_equal(a.ys, b.ys)


class TestDatasetSelectivity:
    seg = grid_segmentation(cell=16)

    def test_single_image(self, random_model, clean_samples):
        attr = random_map(6)
        one = dataset_selectivity(random_model, clean_samples[:1], [attr], self.seg)
        assert one == selectivity_curve(random_model, clean_samples[0], attr, self.seg).auc

    def test_duplicates_do_not_change_mean(self, random_model, clean_samples):
        attr = random_map(7)
        single = dataset_selectivity(random_model, clean_samples[:1], [attr], self.seg)
        doubled = dataset_selectivity(random_model, clean_samples[:1] * 2, [attr, attr], self.seg)
        assert doubled == pytest.approx(single, abs=1e-15)

    def test_mean_of_five(self, random_model, clean_samples):
        maps = [random_map(10 + i) for i in range(5)]
        manual = np.mean([selectivity_curve(random_model, s, a, self.seg).auc for s, a in zip(clean_samples, maps)])
        assert dataset_selectivity(random_model, clean_samples[:5], maps, self.seg) == pytest.approx(manual, abs=1e-12)

    def test_callable_source(self, random_model, clean_samples):
        maps = [random_map(20 + i) for i in range(3)]
        direct = dataset_selectivity(random_model, clean_samples[:3], maps, self.seg)
        lazy = dataset_selectivity(random_model, clean_samples[:3], lambda i, s: maps[i], self.seg)
        assert direct == lazy

    def test_empty_dataset(self, random_model):
        with pytest.raises(InvalidInputError):
            dataset_selectivity(random_model, [], [], self.seg)

    def test_map_count_mismatch(self, random_model, clean_samples):
        with pytest.raises(DimensionError):
            dataset_selectivity(random_model, clean_samples[:2], [random_map(0)], self.seg)

    def test_serial_and_threaded_agree(self, random_model, clean_samples, monkeypatch):
        maps = [random_map(30 + i) for i in range(len(clean_samples))]
        monkeypatch.setattr(settings, "SEQATTR_THREADS", 1)
        serial = dataset_curves(random_model, clean_samples, maps, self.seg)
        monkeypatch.setattr(settings, "SEQATTR_THREADS", 4)
        threaded = dataset_curves(random_model, clean_samples, maps, self.seg)
        assert [c.auc for c in serial] == [c.auc for c in threaded]


class TestRanking:
    def test_single_method(self):
        assert rank_methods({MethodId.LIME: 0.3}).best is MethodId.LIME

    def test_minimum_wins(self):
        ranking = rank_methods({MethodId.LIME: 0.3, MethodId.SALIENCY: 0.2, MethodId.DEEP_LIFT: 0.4})
        assert ranking.best is MethodId.SALIENCY
        assert list(ranking.scores) == [MethodId.DEEP_LIFT, MethodId.SALIENCY, MethodId.LIME]

    def test_ties_go_to_reporting_order(self):
        assert rank_methods({MethodId.LIME: 0.25, MethodId.SALIENCY: 0.25}).best is MethodId.SALIENCY

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            rank_methods({})

    def test_ideal_maps_beat_anti_ideal(self, slot_local_model, clean_samples, slots):
        # slot-local heads make the confidence additive over slot segments,
        # so removing by true effect size is the fastest possible descent
        ideal, anti = [], []
        for sample in clean_samples:
            req = ExplainRequest(sample.image, frozen_prediction(slot_local_model, sample.image), slots)
            effect = explain(AttributionMethod(id=MethodId.FEATURE_ABLATION), slot_local_model, req)
            ideal.append(effect)
            anti.append(AttributionMap(-effect.values))
        z_ideal = dataset_selectivity(slot_local_model, clean_samples, ideal, slots)
        z_anti = dataset_selectivity(slot_local_model, clean_samples, anti, slots)
        assert z_ideal < z_anti
        ranking = rank_methods({MethodId.SALIENCY: z_anti, MethodId.FEATURE_ABLATION: z_ideal})
        assert ranking.best is MethodId.FEATURE_ABLATION


class TestQueryBest:
    seg = grid_segmentation(cell=16)

    def test_one_method_is_best(self, random_model, clean_samples):
        ranking = query_best(random_model, clean_samples[:2], [MethodId.FEATURE_ABLATION], self.seg)
        assert ranking.best is MethodId.FEATURE_ABLATION

    def test_scores_match_dataset_selectivity(self, random_model, clean_samples):
        methods = [MethodId.SALIENCY, MethodId.FEATURE_ABLATION]
        ranking = query_best(random_model, clean_samples[:3], methods, self.seg)
        for method_id in methods:
            maps = global_attributions(random_model, clean_samples[:3], AttributionMethod(id=method_id), self.seg)
            assert ranking.scores[method_id] == dataset_selectivity(random_model, clean_samples[:3], maps, self.seg)
        assert ranking.scores[ranking.best] == min(ranking.scores.values())

    def test_deterministic(self, random_model, clean_samples):
        methods = [MethodId.LIME, MethodId.GRADIENT_SHAP]
        a = query_best(random_model, clean_samples[:2], methods, self.seg)
        b = query_best(random_model, clean_samples[:2], methods, self.seg)
        assert a == b

    def test_preconditions(self, random_model, clean_samples):
        with pytest.raises(InvalidInputError):
            query_best(random_model, clean_samples, [], self.seg)
        with pytest.raises(InvalidInputError):
            query_best(random_model, [], [MethodId.LIME], self.seg)


class TestSelectivityService:
    seg = grid_segmentation(cell=16)

    def test_baseline_is_written_into_removed_segments(self, random_model, clean_samples):
        sample = clean_samples[0]
        service = SelectivityService(random_model, self.seg, baseline=0.4)
        result = service.curve(sample, random_map(50), Metric.CONFIDENCE)
        spec = frozen_prediction(random_model, sample.image)
        assert result.ys[-1] == pytest.approx(random_model.score(Image.filled(0.4), spec), abs=1e-12)

    def test_dataset_selectivity_is_mean_of_curves(self, random_model, clean_samples):
        service = SelectivityService(random_model, self.seg)
        maps = [random_map(60 + i) for i in range(3)]
        curves = [service.curve(s, m) for s, m in zip(clean_samples[:3], maps)]
        expected = sum(c.auc for c in curves) / 3
        assert service.dataset_selectivity(clean_samples[:3], maps) == pytest.approx(expected, abs=1e-12)

    def test_query_best_uses_the_service_segmentation(self, random_model, clean_samples):
        methods = [MethodId.SALIENCY, MethodId.FEATURE_ABLATION]
        ranking = SelectivityService(random_model, self.seg).query_best(clean_samples[:2], methods)
        assert ranking == query_best(random_model, clean_samples[:2], methods, self.seg)
