"""Experiment configuration: a YAML document plus command-line overrides."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

import yaml

from .gateway import BackendConfig


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    model_ids: tuple[str, ...] = ("mock-model",)
    sessions_per_model: int = 20
    repetitions: int = 10
    conversation_temperature: float = 0.7
    probe_temperature: float = 0.0
    alpha: float = 0.05
    themes_path: Optional[str] = None
    questionnaire_dir: Optional[str] = None
    run_dir: str = "runs/default"
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "model_ids", tuple(self.model_ids))
        if not self.model_ids:
            raise ConfigError("model_ids must name at least one model")
        if len(set(self.model_ids)) != len(self.model_ids):
            raise ConfigError("model_ids contains duplicates")
        if self.sessions_per_model < 1:
            raise ConfigError("sessions_per_model must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        for name in ("conversation_temperature", "probe_temperature"):
            value = getattr(self, name)
            if not 0.0 <= value <= 2.0:
                raise ConfigError(f"{name} {value} outside the backend range [0, 2]")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1)")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["model_ids"] = list(self.model_ids)
        return data

    @classmethod
    def from_dict(cls, data: dict, base_dir: Union[str, Path, None] = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        data = dict(data)
        try:
            data["backend"] = BackendConfig.from_dict(dict(data.get("backend") or {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"backend: {exc}") from None
        if isinstance(data.get("model_ids"), str):
            data["model_ids"] = [m.strip() for m in data["model_ids"].split(",") if m.strip()]
        base = Path(base_dir) if base_dir is not None else None
        for key in ("themes_path", "questionnaire_dir", "run_dir"):
            if data.get(key) is not None and base is not None:
                data[key] = _resolve(data[key], base)
        if base is not None and data["backend"].mock_script:
            data["backend"] = replace(data["backend"], mock_script=_resolve(data["backend"].mock_script, base))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Return a copy with every non-None override applied; backend.* keys go to the backend."""
        backend_changes = {k[len("backend."):]: v for k, v in overrides.items() if k.startswith("backend.")}
        top = {k: v for k, v in overrides.items() if not k.startswith("backend.") and v is not None}
        backend_changes = {k: v for k, v in backend_changes.items() if v is not None}
        backend = self.backend
        if backend_changes:
            merged = {**asdict(backend), **backend_changes}
            if merged.get("kind") == "mock":
                merged["endpoint_url"] = None
            try:
                backend = BackendConfig(**merged)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"backend: {exc}") from None
        return replace(self, backend=backend, **top)


def _resolve(value: str, base: Path) -> str:
    p = Path(value).expanduser()
    return str(p if p.is_absolute() else (base / p))


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return ExperimentConfig.from_dict(data or {}, base_dir=path.parent)


def check_paths(config: ExperimentConfig) -> list[str]:
    """Problems with paths that must exist before a run starts."""
    problems = []
    if config.themes_path and not Path(config.themes_path).is_file():
        problems.append(f"themes_path {config.themes_path} does not exist")
    if config.questionnaire_dir and not Path(config.questionnaire_dir).is_dir():
        problems.append(f"questionnaire_dir {config.questionnaire_dir} does not exist")
    if config.backend.mock_script and not Path(config.backend.mock_script).is_file():
        problems.append(f"mock_script {config.backend.mock_script} does not exist")
    return problems
