"""Run configuration shared by every command.

Values are resolved as command line > ``TOPOTRAJ_*`` environment
variables > YAML file > defaults.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .evaluation import DEFAULT_FRACTIONS

ENV_PREFIX = "TOPOTRAJ_"


@dataclass
class Config:
    # inputs
    environment: str = "toy"
    source: str = "synthetic"
    data: str | None = None
    csv_dir: str | None = None
    column_map: dict | None = None
    unit_scale: float = 0.001
    gap_threshold_s: float = 5.0
    border_tolerance: float = 0.5
    # synthetic generator
    num_trajs: int = 500
    grid_resolution: float = 0.25
    noise_std: float | None = None
    obstacle_radius: float = 1.0
    # models
    T: int = 80
    epsilon: float = 0.01
    max_order: int = 5
    sigma_y: float = 0.1
    components: str = "bic"
    reg: float | None = None
    em_tol: float = 1e-6
    em_max_iter: int = 200
    train_fraction: float = 0.8
    seed: int = 0
    # evaluation
    fractions: list = field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    plots: bool = False
    output_dir: str = "out"

    def components_policy(self) -> int | str:
        return "bic" if str(self.components) == "bic" else int(self.components)

    def validate(self) -> "Config":
        errors = []
        if self.source not in ("synthetic", "csv"):
            errors.append("source must be 'synthetic' or 'csv'")
        if not self.epsilon > 0:
            errors.append("epsilon must be > 0")
        if self.max_order < 1:
            errors.append("max_order must be >= 1")
        if self.T < 2:
            errors.append("T must be >= 2")
        if not self.sigma_y > 0:
            errors.append("sigma_y must be > 0")
        if self.reg is not None and not self.reg > 0:
            errors.append("reg must be > 0")
        if not 0 < self.train_fraction < 1:
            errors.append("train_fraction must be in (0, 1)")
        if self.num_trajs < 0:
            errors.append("num_trajs must be >= 0")
        if not self.grid_resolution > 0:
            errors.append("grid_resolution must be > 0")
        if str(self.components) != "bic":
            try:
                if int(self.components) < 1:
                    raise ValueError
            except ValueError:
                errors.append("components must be 'bic' or a positive integer")
        fr = [float(f) for f in self.fractions]
        if not fr or fr != sorted(fr) or not all(0 < f <= 1 for f in fr):
            errors.append("fractions must be ascending values in (0, 1]")
        if errors:
            raise ValueError("invalid configuration: " + "; ".join(errors))
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def out(self, name: str) -> Path:
        return Path(self.output_dir) / name


_FIELDS = {f.name: f for f in fields(Config)}


def _coerce(name: str, value: Any) -> Any:
    """Convert a raw value (possibly a string) to the field's type."""
    if name not in _FIELDS:
        raise ValueError(f"unknown configuration key {name!r}")
    if isinstance(value, str):
        value = yaml.safe_load(value) if value.strip() else None
    kind = _FIELDS[name].type
    if value is None:
        return None
    if kind == "int":
        if isinstance(value, bool) or not float(value).is_integer():
            raise ValueError(f"{name} must be an integer")
        return int(value)
    if kind in ("float", "float | None"):
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ValueError(f"{name} must be true or false")
        return value
    if kind == "list":
        if not isinstance(value, (list, tuple)):
            value = [value]
        return [float(v) for v in value]
    if kind in ("str", "str | None"):
        return str(value)
    return value


def load_config(
    path: str | os.PathLike | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> Config:
    values: dict[str, Any] = {}
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"{path} must hold a mapping")
        for k, v in doc.items():
            values[k] = _coerce(k, v)
    environ = os.environ if environ is None else environ
    for name in _FIELDS:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            values[name] = _coerce(name, environ[key])
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, v)
    return Config(**values).validate()


def dump_config(cfg: Config, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
