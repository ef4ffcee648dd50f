"""
seqattr - attribution methods and their selectivity for a slot-based text recognizer

Usage:
    python app.py synth --name clean --size 1000 --variant clean --seed 1
    python app.py train --dataset data/clean --model models/slotnet.sxm
    python app.py explain --model models/slotnet.sxm --dataset data/clean --index 0 --method strexp
    python app.py benchmark configs/desk.ini --plot
    python app.py query-best configs/desk.ini

Exit codes: 0 success, 1 usage or config error, 2 runtime or data error.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from src.config.run_config import load_run_config
from src.config.settings import settings
from src.explainers.base_explainer import AttributionMethod, MethodId, MethodParams
from src.explainers.registry import list_methods
from src.models.model_io import load_model, save_model
from src.models.slot_net import SlotNet, decode
from src.models.trainer import TrainingConfig, evaluate_dataset, train
from src.services.benchmark_service import STREXP_GL, STREXP_L, dataset_name, load_samples, run_benchmark, write_report
from src.services.dataset_service import DatasetService, DatasetSpec, Sample, Variant, load_dataset
from src.services.selectivity_service import Metric, query_best
from src.services.strexp_service import AUTO, Normalization, StrExpConfig, StrExpMode, global_explanation, strexp_explain
from src.utils.atomic import atomic_write_text
from src.utils.errors import CapabilityError, ConfigError, SeqAttrError, UsageError
from src.utils.imaging import (
    AttributionMap, Image, SegmentMap, grid_segmentation, read_pgm, render_heatmap, segment_means,
    slot_segmentation, stack_rasters, write_png, write_ppm,
)
from src.utils.logger import bind_run_context, logger
from src.utils.seeding import make_rng

STREXP = "strexp"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class CliParser(argparse.ArgumentParser):
    """Argument errors raise instead of exiting so main() owns the exit code"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _segmentation(args: argparse.Namespace) -> SegmentMap:
    if args.segmentation == "slots":
        return slot_segmentation()
    return grid_segmentation(cell=args.cell)


def _load_model(path: Path, no_grad: bool = False) -> SlotNet:
    model = load_model(path)
    return model.without_gradients() if no_grad else model


def _write_heatmap(path: Path, img: Image, attr: AttributionMap, png: bool) -> List[str]:
    raster = render_heatmap(img, attr)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(path, raster)
    written = [path.name]
    if png:
        write_png(path.with_suffix(".png"), raster)
        written.append(path.with_suffix(".png").name)
    return written


def _select_image(args: argparse.Namespace) -> Sample:
    if args.image is not None:
        return Sample(image=read_pgm(args.image), label="", slot_boxes=())
    if args.dataset is None:
        raise UsageError("explain needs --image or --dataset")
    samples = load_dataset(args.dataset)
    if not 0 <= args.index < len(samples):
        raise UsageError(f"--index {args.index} outside dataset of {len(samples)} images")
    return samples[args.index]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    spec = DatasetSpec(name=args.name, size=args.size, variant=args.variant, seed=args.seed)
    directory = DatasetService(args.out_dir).synthesize(spec)
    print(f"synthesized {spec.size} {spec.variant.value} samples (seed {spec.seed}) -> {directory}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    samples = load_dataset(args.dataset)
    order = make_rng(args.seed, 0).permutation(len(samples))
    n_val = int(round(len(samples) * args.val_fraction))
    if len(samples) - n_val < 1:
        raise UsageError("--val-fraction leaves no training samples")
    validation = [samples[i] for i in order[:n_val]]
    training = [samples[i] for i in order[n_val:]]

    config = TrainingConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        momentum=args.momentum,
        batch_size=args.batch_size,
        seed=args.seed,
        fresh_variant=None if args.fresh_variant == "none" else args.fresh_variant,
    )
    model = SlotNet.initialize(seed=args.seed)
    result = train(model, training, config)
    path = save_model(result.model, args.model)

    held_out = validation or training
    summary = evaluate_dataset(result.model, held_out)
    final_loss = result.loss_history[-1] if result.loss_history else float("nan")
    print(f"model -> {path}  epochs {config.epochs}  final loss {final_loss:.6f}  "
          f"exact-match accuracy {summary.exact_match:.4f} on {len(held_out)} "
          f"{'validation' if validation else 'training'} images")
    print("slot accuracy   " + " ".join(f"{v:.3f}" for v in summary.slot_accuracy))
    print("slot confidence " + " ".join(f"{v:.3f}" for v in summary.slot_confidence))
    return EXIT_OK


def _explain_strexp(
    args: argparse.Namespace,
    model: SlotNet,
    sample: Sample,
    seg: SegmentMap,
    params: MethodParams,
    out_dir: Path,
    sidecar: dict,
) -> AttributionMap:
    cfg = StrExpConfig(
        mode=StrExpMode(args.mode),
        base_method=args.base_method,
        normalization=Normalization(args.normalization),
        include_blank_slots=args.include_blank_slots,
    )
    if cfg.base_method == AUTO and not args.calibration:
        raise UsageError("--base-method auto needs --calibration (or name a method)")
    calibration = load_samples(args.calibration, args.calibration_size) if args.calibration else None
    result = strexp_explain(model, sample.image, cfg, seg, args.baseline, params, calibration)

    files = _write_heatmap(out_dir / "final.ppm", sample.image, result.final, args.png)
    maps = {"final": result.final}
    if result.global_map is not None:
        files += _write_heatmap(out_dir / "global.ppm", sample.image, result.global_map, args.png)
        maps["global"] = result.global_map
    for item in result.locals:
        files += _write_heatmap(out_dir / f"slot{item.slot}.ppm", sample.image, item.attribution, args.png)
        maps[f"slot{item.slot}"] = item.attribution

    sidecar.update(
        method=STREXP_GL if cfg.mode is StrExpMode.GL else STREXP_L,
        base_method=result.base_method.value,
        strexp=cfg.model_dump(mode="json"),
        locals=[{"slot": item.slot, "char": item.char, "target_class": item.target_class}
                for item in result.locals],
        files=files,
        segment_scores={name: segment_means(attr, seg).scores.tolist() for name, attr in maps.items()},
    )
    return result.final


def _explain_all(
    args: argparse.Namespace,
    model: SlotNet,
    sample: Sample,
    seg: SegmentMap,
    params: MethodParams,
    out_dir: Path,
    sidecar: dict,
) -> None:
    """Every baseline plus StrExp-GL, stacked into one montage"""
    rasters = [render_heatmap(sample.image, AttributionMap.zeros())]
    shown, skipped = [], []
    scores = {}
    for method_id in list_methods():
        try:
            attr = global_explanation(model, sample.image, AttributionMethod(id=method_id, params=params),
                                      seg, args.baseline)
        except CapabilityError as e:
            logger.warning("Method skipped", method=method_id.value, reason=str(e))
            skipped.append(method_id.value)
            continue
        rasters.append(render_heatmap(sample.image, attr))
        shown.append(method_id.value)
        scores[method_id.value] = segment_means(attr, seg).scores.tolist()

    final = _explain_strexp(args, model, sample, seg, params, out_dir, sidecar)
    rasters.append(render_heatmap(sample.image, final))
    shown.append(sidecar["method"])
    scores[sidecar["method"]] = segment_means(final, seg).scores.tolist()

    montage = stack_rasters(rasters)
    write_ppm(out_dir / "montage.ppm", montage)
    sidecar["files"].append("montage.ppm")
    if args.png:
        write_png(out_dir / "montage.png", montage)
        sidecar["files"].append("montage.png")
    sidecar.update(montage_rows=["input"] + shown, skipped_methods=skipped, montage_segment_scores=scores)


def cmd_explain(args: argparse.Namespace) -> int:
    model = _load_model(args.model, args.no_grad)
    sample = _select_image(args)
    seg = _segmentation(args)
    params = MethodParams(seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    out, _ = model.forward(sample.image)
    text, slot_classes = decode(out)
    sidecar = {
        "predicted_text": text,
        "label": sample.label,
        "slot_classes": slot_classes,
        "slot_confidences": [float(out.probs[k, c]) for k, c in enumerate(slot_classes)],
        "params": params.model_dump(mode="json"),
        "seed": args.seed,
        "baseline": args.baseline,
        "segmentation": {"kind": args.segmentation, "cell": args.cell, "segments": seg.segment_count},
    }

    if args.all_methods:
        _explain_all(args, model, sample, seg, params, out_dir, sidecar)
    elif args.method == STREXP:
        _explain_strexp(args, model, sample, seg, params, out_dir, sidecar)
    else:
        method = AttributionMethod(id=MethodId(args.method), params=params)
        attr = global_explanation(model, sample.image, method, seg, args.baseline)
        files = _write_heatmap(out_dir / f"{method.id.value}.ppm", sample.image, attr, args.png)
        sidecar.update(method=method.id.value, files=files,
                       segment_scores={"global": segment_means(attr, seg).scores.tolist()})

    atomic_write_text(out_dir / "explanation.json", json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    print(f"predicted '{text}'  method {sidecar['method']}  -> {out_dir}")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    config.check_paths()
    model = _load_model(config.run.model)
    report = run_benchmark(model, config, include_curves=args.curves)
    output_dir = Path(args.output_dir) if args.output_dir else config.run.output_dir
    paths = write_report(report, output_dir, plot=args.plot)

    for dataset, winners in report.best_per_dataset().items():
        summary = "  ".join(f"{metric}: {method}" for metric, method in sorted(winners.items()))
        print(f"{dataset}: lowest selectivity  {summary}")
    print(f"report -> {paths['json']}")
    return EXIT_OK


def cmd_query_best(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    config.check_paths()
    model = _load_model(config.run.model)
    if args.dataset:
        source = Path(args.dataset)
    elif config.strexp.calibration is not None:
        source = config.strexp.calibration
    else:
        source = config.run.datasets[0]
    samples = load_samples(source, config.run.max_images)

    ranking = query_best(model, samples, config.method_ids, config.segment_map(), config.run.baseline,
                         Metric(args.metric), config.params)
    print(f"selectivity {args.metric} on {dataset_name(source)} ({len(samples)} images)")
    for method_id, z in ranking.scores.items():
        marker = "*" if method_id is ranking.best else " "
        print(f"{marker} {method_id.value:<20} {z:.6f}")
    print(f"best: {ranking.best.value}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_segmentation_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--segmentation", choices=["grid", "slots"], default="grid")
    parser.add_argument("--cell", type=int, default=settings.DEFAULT_CELL, help="grid cell size in pixels")
    parser.add_argument("--baseline", type=float, default=settings.DEFAULT_BASELINE,
                        help="intensity of removed pixels")


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="seqattr", description="Attribution and selectivity for a slot text recognizer")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--name", required=True)
    synth.add_argument("--size", type=int, required=True)
    synth.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.CLEAN.value)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out-dir", default=settings.DATA_DIR)
    synth.set_defaults(func=cmd_synth)

    tr = sub.add_parser("train", help="train the slot recognizer")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--model", default=settings.MODEL_PATH, help="output model file")
    tr.add_argument("--epochs", type=int, default=TrainingConfig().epochs)
    tr.add_argument("--lr", type=float, default=TrainingConfig().learning_rate)
    tr.add_argument("--momentum", type=float, default=TrainingConfig().momentum)
    tr.add_argument("--batch-size", type=int, default=TrainingConfig().batch_size)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--val-fraction", type=float, default=0.1)
    tr.add_argument("--fresh-variant", choices=[v.value for v in Variant] + ["none"], default=Variant.CLEAN.value,
                    help="variant rendered fresh for every epoch after the first (none: reuse the dataset)")
    tr.set_defaults(func=cmd_train)

    ex = sub.add_parser("explain", help="explain one image")
    ex.add_argument("--model", default=settings.MODEL_PATH)
    ex.add_argument("--image", type=Path, help="PGM file to explain")
    ex.add_argument("--dataset", help="dataset directory (with --index)")
    ex.add_argument("--index", type=int, default=0)
    ex.add_argument("--method", choices=[m.value for m in MethodId] + [STREXP], default=STREXP)
    ex.add_argument("--all-methods", action="store_true", help="montage of every method plus StrExp")
    ex.add_argument("--mode", choices=[m.value for m in StrExpMode], default=StrExpMode.GL.value)
    ex.add_argument("--base-method", choices=[m.value for m in MethodId] + [AUTO], default=AUTO)
    ex.add_argument("--normalization", choices=[n.value for n in Normalization], default=Normalization.LINF.value)
    ex.add_argument("--include-blank-slots", action="store_true")
    ex.add_argument("--calibration", help="dataset used to query the best base method")
    ex.add_argument("--calibration-size", type=int, default=50)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--no-grad", action="store_true", help="load the model without gradient capability")
    ex.add_argument("--png", action="store_true", help="also write PNG copies")
    ex.add_argument("--out", default=str(Path(settings.OUTPUT_DIR) / "explain"))
    _add_segmentation_args(ex)
    ex.set_defaults(func=cmd_explain)

    bench = sub.add_parser("benchmark", help="selectivity of every method on every dataset")
    bench.add_argument("config")
    bench.add_argument("--curves", action="store_true", help="include per-image curves in the JSON")
    bench.add_argument("--plot", action="store_true", help="also write report.html")
    bench.add_argument("--output-dir")
    bench.set_defaults(func=cmd_benchmark)

    qb = sub.add_parser("query-best", help="rank methods by selectivity and print the best")
    qb.add_argument("config")
    qb.add_argument("--dataset", help="rank on this dataset instead of the calibration set")
    qb.add_argument("--metric", choices=[m.value for m in Metric], default=Metric.CONFIDENCE.value)
    qb.set_defaults(func=cmd_query_best)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        bind_run_context(command=args.command)
        return args.func(args)
    except ValidationError as e:
        logger.error("Invalid argument values", error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        logger.error("Invalid usage or configuration", error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SeqAttrError, OSError) as e:
        logger.error("Command failed", error=str(e), kind=type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
