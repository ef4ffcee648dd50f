"""
Run configuration: a line-oriented key = value file with [section] headers

    [run]
    model = models/slotnet.sxm
    datasets = data/clean, data/noisy
    cell = 8
    metrics = accuracy, confidence

    [methods]
    ids = Saliency, FeatureAblation

    [params]
    ig_steps = 32

    [strexp]
    base_method = auto
    calibration = data/calibration

Lines starting with # or ; are comments. Every error names the file and line.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from src.config.settings import settings
from src.explainers.base_explainer import MethodId, MethodParams
from src.services.selectivity_service import Metric
from src.services.strexp_service import AUTO, Normalization
from src.utils.errors import ConfigError
from src.utils.imaging import HEIGHT, WIDTH, SegmentMap, grid_segmentation, slot_segmentation

SECTIONS = ("run", "methods", "params", "strexp")
LIST_KEYS = {("run", "datasets"), ("run", "metrics"), ("methods", "ids")}


@dataclass
class RawConfig:
    """Parsed but unvalidated values, with the line each one came from"""
    source: str
    values: Dict[str, Dict[str, Union[str, List[str]]]] = field(default_factory=dict)
    lines: Dict[Tuple[str, ...], int] = field(default_factory=dict)

    def line_of(self, loc: Tuple) -> Optional[int]:
        for depth in (2, 1):
            key = tuple(str(part) for part in loc[:depth])
            if key in self.lines:
                return self.lines[key]
        return None


def parse_config_text(text: str, source: str = "<config>") -> RawConfig:
    raw = RawConfig(source=source)
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"{source}:{number}: unterminated section header")
            section = stripped[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigError(f"{source}:{number}: unknown section [{section}]")
            if section in raw.values:
                raise ConfigError(f"{source}:{number}: section [{section}] appears twice")
            raw.values[section] = {}
            raw.lines[(section,)] = number
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{number}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"{source}:{number}: key outside of any section")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{number}: empty key")
        if key in raw.values[section]:
            raise ConfigError(f"{source}:{number}: duplicate key '{key}' in [{section}]")
        if (section, key) in LIST_KEYS:
            raw.values[section][key] = [item.strip() for item in value.split(",") if item.strip()]
        else:
            raw.values[section][key] = value
        raw.lines[(section, key)] = number
    return raw


class RunSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: Path = Path(settings.MODEL_PATH)
    datasets: List[Path] = Field(min_length=1)
    output_dir: Path = Path(settings.OUTPUT_DIR)
    segmentation: Literal["grid", "slots"] = "grid"
    cell: int = Field(default=settings.DEFAULT_CELL, ge=1)
    baseline: float = Field(default=settings.DEFAULT_BASELINE, ge=0.0, le=1.0)
    metrics: List[Metric] = Field(default_factory=lambda: [Metric.ACCURACY, Metric.CONFIDENCE], min_length=1)
    seed: int = Field(default=0, ge=0)
    max_images: Optional[int] = Field(default=None, ge=1)

    @field_validator("cell")
    @classmethod
    def cell_divides_image(cls, v: int) -> int:
        if HEIGHT % v or WIDTH % v:
            raise ValueError(f"cell {v} must divide both {HEIGHT} and {WIDTH}")
        return v


class StrExpSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = True
    base_method: Union[MethodId, Literal["auto"]] = AUTO
    normalization: Normalization = Normalization.LINF
    include_blank_slots: bool = False
    calibration: Optional[Path] = None

    @model_validator(mode="after")
    def auto_needs_calibration(self) -> "StrExpSection":
        if self.enabled and self.base_method == AUTO and self.calibration is None:
            raise ValueError("base_method = auto requires a calibration dataset")
        return self


class MethodsSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ids: List[MethodId] = Field(default_factory=lambda: list(MethodId), min_length=1)


class RunConfig(BaseModel):
    """Validated run configuration"""
    model_config = ConfigDict(extra="forbid")

    run: RunSection
    methods: MethodsSection = MethodsSection()
    params: MethodParams = MethodParams()
    strexp: StrExpSection = StrExpSection(enabled=False)          # no [strexp] section: baselines only
    _raw: Optional[RawConfig] = PrivateAttr(default=None)

    @property
    def method_ids(self) -> List[MethodId]:
        return list(self.methods.ids)

    def segment_map(self) -> SegmentMap:
        if self.run.segmentation == "slots":
            return slot_segmentation()
        return grid_segmentation(cell=self.run.cell)

    def echo(self) -> dict:
        """Resolved configuration, JSON-serializable"""
        return self.model_dump(mode="json")

    def check_paths(self) -> None:
        """Referenced inputs must exist when a command runs"""
        checks = [(("run", "model"), self.run.model)]
        checks += [(("run", "datasets"), path) for path in self.run.datasets]
        if self.strexp.enabled and self.strexp.calibration is not None:
            checks.append((("strexp", "calibration"), self.strexp.calibration))
        for loc, path in checks:
            if not path.exists():
                raise ConfigError(self._where(loc) + f"path does not exist: {path}")

    def _where(self, loc: Tuple) -> str:
        if self._raw is None:
            return ""
        line = self._raw.line_of(loc)
        return f"{self._raw.source}:{line}: " if line else f"{self._raw.source}: "


def build_run_config(raw: RawConfig) -> RunConfig:
    values = {section: dict(entries) for section, entries in raw.values.items()}
    if "run" not in values:
        raise ConfigError(f"{raw.source}: missing [run] section")
    params = values.setdefault("params", {})
    if "seed" not in params and "seed" in values["run"]:
        params["seed"] = values["run"]["seed"]
    try:
        config = RunConfig(**values)
    except ValidationError as e:
        first = e.errors()[0]
        line = raw.line_of(first["loc"])
        where = f"{raw.source}:{line}" if line else raw.source
        field_name = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{where}: {field_name}: {first['msg']}") from e
    config._raw = raw
    return config


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    return build_run_config(parse_config_text(text, source))


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_run_config(text, str(path))
