"""Experiment configuration: YAML sections validated by pydantic models.

Defaults describe the standard wave experiment (dt 0.1, c 3.0, encoding
dim 4, 256 hidden units, 10 epochs, 200 GP iterations). Validation errors
are reported with the line of the offending key.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSection(Section):
    height: int = Field(16, ge=2)
    width: int = Field(16, ge=2)
    dx: float = Field(1.0, gt=0)
    dy: float = Field(1.0, gt=0)
    dt: float = Field(0.1, gt=0)


class WaveSection(Section):
    c: float = Field(3.0, gt=0)
    amplitude: float = 0.34
    sigma2_x: float = Field(0.5, gt=0)
    sigma2_y: float = Field(0.5, gt=0)
    center: Optional[tuple[float, float]] = None
    steps: Optional[int] = Field(None, ge=2)


class DataSection(Section):
    source: Literal["wave", "csv"] = "wave"
    path: Optional[str] = None
    split: Optional[int] = Field(None, ge=2)

    @model_validator(mode="after")
    def _csv_needs_path(self):
        if self.source == "csv":
            if not self.path:
                raise ValueError("csv data need 'path'")
            if self.split is None:
                raise ValueError("csv data need 'split' (first time index used for evaluation)")
        return self


class ForecastSection(Section):
    d_pos: int = Field(4, ge=4)
    d_lat: int = Field(4, ge=1)
    d_fused: int = Field(32, ge=1)
    d_hidden: int = Field(256, ge=1)
    lstm_mode: Literal["standard", "literal"] = "standard"
    epochs: int = Field(10, ge=1)
    lr: float = Field(1e-3, gt=0)

    @model_validator(mode="after")
    def _even_encoding(self):
        if self.d_pos % 2:
            raise ValueError("d_pos must be even")
        return self


class GpSection(Section):
    max_points: int = Field(1500, ge=2)
    max_iter: int = Field(200, ge=1)


class PhysicsSection(Section):
    mode: Literal["enabled", "disabled", "fixed"] = "enabled"
    fixed_lambda: float = 9.0
    form: Union[str, list[str]] = "wave"
    derivatives: Literal["analytic", "stencil"] = "analytic"
    max_iter: int = Field(200, ge=1)


class KrigingSection(Section):
    inputs: Literal["spatial", "spatiotemporal"] = "spatial"
    exclude_current: bool = False
    max_iter: int = Field(200, ge=1)


class ActiveSection(Section):
    sampler: Literal["kriging", "random"] = "kriging"
    n: Optional[int] = Field(None, ge=1)
    rate: float = Field(0.1, gt=0, le=1)
    window: int = Field(10, ge=2)
    max_steps: int = Field(10, ge=1)
    loss_threshold: float = Field(0.0, ge=0)


class EvalSection(Section):
    waves: int = Field(16, ge=1)
    steps: int = Field(50, ge=2)
    seed: int = 1234


class RunSection(Section):
    id: Optional[str] = None
    seed: int = 0
    record_seconds: bool = False
    checkpoint_each_step: bool = False
    workers: int = Field(1, ge=1)


class MatrixSection(Section):
    samplers: list[Literal["kriging", "random"]] = ["kriging", "random"]
    rates: list[float] = [0.1, 0.2, 0.4]
    physics: list[Literal["enabled", "disabled", "fixed"]] = ["enabled", "disabled"]


class ExperimentConfig(Section):
    grid: GridSection = GridSection()
    wave: WaveSection = WaveSection()
    data: DataSection = DataSection()
    forecast: ForecastSection = ForecastSection()
    gp: GpSection = GpSection()
    physics: PhysicsSection = PhysicsSection()
    kriging: KrigingSection = KrigingSection()
    active: ActiveSection = ActiveSection()
    eval: EvalSection = EvalSection()
    run: RunSection = RunSection()
    matrix: MatrixSection = MatrixSection()

    def with_changes(self, **sections) -> "ExperimentConfig":
        """Copy with per-section field overrides, e.g. ``active={"sampler": "random"}``."""
        data = self.model_dump()
        for name, changes in sections.items():
            data[name].update(changes)
        return ExperimentConfig.model_validate(data)

    def site_budget(self, observable_cells: int) -> int:
        if self.active.n is not None:
            return self.active.n
        return max(1, int(round(self.active.rate * observable_cells)))


class ConfigError(ValueError):
    """Malformed configuration; ``str()`` carries file and line."""


def _line_map(node, path=(), out=None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            p = path + (key.value,)
            out[p] = key.start_mark.line + 1
            _line_map(value, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for k, value in enumerate(node.value):
            out[path + (k,)] = value.start_mark.line + 1
            _line_map(value, path + (k,), out)
    return out


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"{source}:{line}: {exc.problem}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping of sections")
    lines = _line_map(node) if node is not None else {}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            line = None
            for k in range(len(loc), 0, -1):
                if loc[:k] in lines:
                    line = lines[loc[:k]]
                    break
            where = ".".join(str(p) for p in loc) or "(top level)"
            msgs.append(f"{source}:{line or 1}: {where}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
