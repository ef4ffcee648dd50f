"""
Benchmark Service - selectivity of every method on every dataset, as a report

For each dataset the eleven baselines explain the global score; StrExp-GL and
StrExp-L explain with the resolved base method and share their local maps.
Each map is computed once and evaluated under every configured metric.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from src.config.run_config import RunConfig
from src.explainers.base_explainer import AttributionMethod, MethodId
from src.models.slot_net import SlotNet
from src.models.trainer import evaluate_dataset
from src.services.dataset_service import DatasetService, Sample
from src.services.selectivity_service import Metric, SelectivityCurve, SelectivityService, seeded_method
from src.services.strexp_service import StrExpConfig, StrExpService
from src.utils.atomic import atomic_write_text
from src.utils.imaging import AttributionMap
from src.utils.logger import logger
from src.utils.metrics import mean_area
from src.utils.parallel import parallel_map

STREXP_GL = "StrExp-GL"
STREXP_L = "StrExp-L"
CSV_COLUMNS = ["method", "dataset", "metric", "auc", "n_images", "seed"]


@dataclass(frozen=True)
class ReportRow:
    method: str
    dataset: str
    metric: Metric
    auc: float
    n_images: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "dataset": self.dataset,
            "metric": self.metric.value,
            "auc": self.auc,
            "n_images": self.n_images,
            "seed": self.seed,
        }


@dataclass
class BenchmarkReport:
    """Mean selectivity AUC per (method, dataset, metric) with provenance"""
    rows: List[ReportRow]
    config: dict
    model_accuracy: Dict[str, float] = field(default_factory=dict)
    model_evaluation: Dict[str, dict] = field(default_factory=dict)
    base_method: Optional[MethodId] = None
    curves: Optional[Dict[str, Dict[str, Dict[str, List[dict]]]]] = None

    @property
    def methods(self) -> List[str]:
        return list(dict.fromkeys(row.method for row in self.rows))

    @property
    def datasets(self) -> List[str]:
        return list(dict.fromkeys(row.dataset for row in self.rows))

    def auc(self, method: str, dataset: str, metric: Metric) -> float:
        for row in self.rows:
            if (row.method, row.dataset, row.metric) == (method, dataset, Metric(metric)):
                return row.auc
        raise KeyError((method, dataset, metric))

    def best_per_dataset(self) -> Dict[str, Dict[str, str]]:
        """Lowest-AUC method per dataset and metric; ties go to the earlier row"""
        best: Dict[str, Dict[str, Tuple[float, str]]] = {}
        for row in self.rows:
            current = best.setdefault(row.dataset, {}).get(row.metric.value)
            if current is None or row.auc < current[0]:
                best[row.dataset][row.metric.value] = (row.auc, row.method)
        return {ds: {m: winner for m, (_, winner) in metrics.items()} for ds, metrics in best.items()}

    def to_dict(self) -> dict:
        payload = {
            "rows": [row.to_dict() for row in self.rows],
            "best_per_dataset": self.best_per_dataset(),
            "model_accuracy": self.model_accuracy,
            "model_evaluation": self.model_evaluation,
            "strexp_base_method": self.base_method.value if self.base_method else None,
            "config": self.config,
        }
        if self.curves is not None:
            payload["curves"] = self.curves
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.to_dict() for row in self.rows], columns=CSV_COLUMNS)


def dataset_name(path: Path) -> str:
    return Path(path).name


def load_samples(path: Path, max_images: Optional[int] = None) -> List[Sample]:
    return DatasetService().load(path, max_images)


class BenchmarkRunner:
    """Runs one configured benchmark against a loaded model"""

    def __init__(self, model: SlotNet, config: RunConfig, include_curves: bool = False):
        self.model = model
        self.config = config
        self.include_curves = include_curves
        self.seg = config.segment_map()
        self.baseline = config.run.baseline
        self.datasets = DatasetService()
        self.selectivity = SelectivityService(model, self.seg, self.baseline)
        self.strexp = StrExpService(model, self.seg, self.baseline, config.params)
        self.rows: List[ReportRow] = []
        self.curves: Dict[str, Dict[str, Dict[str, List[dict]]]] = {}

    def _record(self, method: str, dataset: str, samples: Sequence[Sample], maps: Sequence[AttributionMap]) -> None:
        for metric in self.config.run.metrics:
            curves: List[SelectivityCurve] = self.selectivity.dataset_curves(samples, maps, metric)
            auc = mean_area(c.auc for c in curves)
            self.rows.append(ReportRow(method, dataset, metric, auc, len(samples), self.config.run.seed))
            if self.include_curves:
                per_metric = self.curves.setdefault(method, {}).setdefault(dataset, {})
                per_metric[metric.value] = [c.to_dict() for c in curves]
            logger.info("Selectivity measured", method=method, dataset=dataset, metric=metric.value, auc=auc)

    def strexp_maps(
        self,
        samples: Sequence[Sample],
        method: AttributionMethod,
        cfg: StrExpConfig,
    ) -> Tuple[List[AttributionMap], List[AttributionMap]]:
        """GL and L final maps per image, image i seeded by (seed, i)"""
        pairs = parallel_map(
            lambda index: self.strexp.combined_maps(samples[index].image, seeded_method(method, index), cfg),
            range(len(samples)),
        )
        return [gl for gl, _ in pairs], [l for _, l in pairs]

    def resolve_strexp(self) -> Optional[Tuple[MethodId, StrExpConfig]]:
        section = self.config.strexp
        if not section.enabled:
            return None
        cfg = StrExpConfig(
            base_method=section.base_method,
            normalization=section.normalization,
            include_blank_slots=section.include_blank_slots,
        )
        calibration = None
        if section.calibration is not None:
            calibration = self.datasets.load(section.calibration, self.config.run.max_images)
        base = self.strexp.resolve_base_method(cfg, calibration, self.config.method_ids)
        logger.info("StrExp base method resolved", base_method=base.value)
        return base, cfg

    def run(self) -> "BenchmarkReport":
        strexp = self.resolve_strexp()
        accuracy, evaluation = {}, {}
        for path in self.config.run.datasets:
            name = dataset_name(path)
            samples = self.datasets.load(path, self.config.run.max_images)
            summary = evaluate_dataset(self.model, samples)
            accuracy[name] = summary.exact_match
            evaluation[name] = summary.to_dict()
            logger.info("Benchmarking dataset", dataset=name, images=len(samples), accuracy=accuracy[name])

            for method_id in self.config.method_ids:
                method = AttributionMethod(id=method_id, params=self.config.params)
                maps = self.selectivity.global_attributions(samples, method)
                self._record(method_id.value, name, samples, maps)

            if strexp is not None:
                base, cfg = strexp
                method = AttributionMethod(id=base, params=self.config.params)
                gl_maps, l_maps = self.strexp_maps(samples, method, cfg)
                self._record(STREXP_GL, name, samples, gl_maps)
                self._record(STREXP_L, name, samples, l_maps)

        return BenchmarkReport(
            rows=self.rows,
            config=self.config.echo(),
            model_accuracy=accuracy,
            model_evaluation=evaluation,
            base_method=strexp[0] if strexp else None,
            curves=self.curves if self.include_curves else None,
        )


def run_benchmark(model: SlotNet, config: RunConfig, include_curves: bool = False) -> BenchmarkReport:
    return BenchmarkRunner(model, config, include_curves).run()


def report_figure(report: BenchmarkReport) -> go.Figure:
    """One panel per metric, methods on x, one line per dataset, winners starred"""
    metrics = list(dict.fromkeys(row.metric for row in report.rows))
    fig = make_subplots(rows=1, cols=len(metrics), subplot_titles=[f"Selectivity {m.value}" for m in metrics])
    best = report.best_per_dataset()
    for col, metric in enumerate(metrics, start=1):
        for dataset in report.datasets:
            rows = [r for r in report.rows if r.dataset == dataset and r.metric is metric]
            fig.add_trace(go.Scatter(
                name=dataset,
                legendgroup=dataset,
                showlegend=col == 1,
                x=[r.method for r in rows],
                y=[r.auc for r in rows],
                mode="lines+markers",
            ), row=1, col=col)
            winner = best[dataset][metric.value]
            fig.add_trace(go.Scatter(
                x=[winner],
                y=[report.auc(winner, dataset, metric)],
                mode="markers",
                marker=dict(symbol="star", size=14),
                legendgroup=dataset,
                showlegend=False,
                hovertext=f"lowest on {dataset}",
            ), row=1, col=col)
        fig.update_yaxes(title_text="AUC (lower is better)", row=1, col=col)
    fig.update_layout(title="Selectivity per method and dataset", height=500)
    return fig


def write_report(report: BenchmarkReport, output_dir: Path, plot: bool = False) -> Dict[str, Path]:
    """report.json and report.csv (and report.html when plotting), each written atomically"""
    output_dir = Path(output_dir)
    paths = {"json": output_dir / "report.json", "csv": output_dir / "report.csv"}
    atomic_write_text(paths["json"], report.to_json())
    atomic_write_text(paths["csv"], report.to_frame().to_csv(index=False))
    if plot:
        paths["html"] = output_dir / "report.html"
        atomic_write_text(paths["html"], report_figure(report).to_html(include_plotlyjs="cdn"))
    logger.info("Report written", output_dir=str(output_dir), rows=len(report.rows))
    return paths
