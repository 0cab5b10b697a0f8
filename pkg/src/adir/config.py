"""
Run configuration.

A config file is a list of flat ``section.key = value`` lines (top-level keys
have no section). ``#`` starts a comment. Values are read as JSON where
possible (numbers, booleans, lists) and as plain strings otherwise, then
validated by the pydantic model tree below. Unknown and duplicate keys are
errors.
"""

from __future__ import annotations

import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .adaptation import AdaptConfig, AdaptSource
from .denoiser import ArchConfig, TrainConfig
from .diffusion import DiffusionSchedule, ScheduleKind, linear_defaults, make_schedule
from .errors import ConfigError, NotFound
from .operators import Task
from .sampler import GuidanceConfig


class Method(str, Enum):
    BASELINE = "baseline"
    IA = "ia"
    ADIR = "adir"


# adaptation presets per method; explicit adapt.* values override them
ADAPT_PRESETS: dict[Method, dict[str, Any]] = {
    Method.IA: {"iterations": 100, "learning_rate": 1e-4, "ema_rate": 0.95, "source": AdaptSource.OBSERVATION},
    Method.ADIR: {"iterations": 400, "learning_rate": 1e-4, "ema_rate": 0.8, "source": AdaptSource.NEIGHBORS},
}
GUIDANCE_SCALE = {Task.SR8: 20.0}


class AdirSettings(BaseSettings):
    """Process environment: ``ADIR_OUTPUT_ROOT``, ``ADIR_LOG_LEVEL`` (``.env`` honoured)."""

    model_config = SettingsConfigDict(env_prefix="ADIR_", env_file=".env", extra="ignore")

    output_root: Path = Path("runs")
    log_level: str = "INFO"


class ScheduleConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    T: int = Field(200, ge=1)
    kind: ScheduleKind = ScheduleKind.LINEAR
    beta_start: Optional[float] = Field(None, gt=0, le=1)
    beta_end: Optional[float] = Field(None, gt=0, le=1)

    def build(self) -> DiffusionSchedule:
        start, end = linear_defaults(self.T)
        return make_schedule(
            self.T,
            self.kind,
            self.beta_start if self.beta_start is not None else start,
            self.beta_end if self.beta_end is not None else end,
        )


class RetrievalConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    K: int = Field(20, ge=1)


class DataConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["textures", "gaussians"] = "textures"
    count: int = Field(200, ge=0)
    size: int = Field(32, ge=8)
    clusters: int = Field(4, ge=1)
    seed: int = 0


class OracleConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = Field(8, ge=1, le=64)
    m: int = Field(4, ge=1)
    sigma: float = Field(0.1, ge=0)
    T: int = Field(200, ge=2)
    samples: int = Field(200, ge=2)
    scales: list[float] = Field(default_factory=lambda: [1.0, 5.0, 10.0])
    truths: int = Field(10, ge=1)
    chains: int = Field(5000, ge=2)
    seed: int = 0


class EvalConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    workers: int = Field(4, ge=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    task: Task = Task.SR2
    method: Method = Method.ADIR
    seed: int = 0
    sigma: Optional[float] = Field(None, ge=0)
    mask_path: Optional[Path] = None
    kernel_path: Optional[Path] = None
    corpus_dir: Path = Path("data/corpus")
    train_dir: Path = Path("data/train")
    index_path: Path = Path("data/index.adx")
    output_dir: Optional[Path] = None

    schedule: ScheduleConfig = ScheduleConfig()
    model: ArchConfig = ArchConfig()
    train: TrainConfig = TrainConfig()
    guidance: GuidanceConfig = GuidanceConfig()
    adapt: AdaptConfig = AdaptConfig()
    retrieval: RetrievalConfig = RetrievalConfig()
    data: DataConfig = DataConfig()
    oracle: OracleConfig = OracleConfig()
    eval: EvalConfig = EvalConfig()

    @model_validator(mode="after")
    def _task_scale(self) -> "RunConfig":
        scale = GUIDANCE_SCALE.get(self.task)
        if scale is not None and "s" not in self.guidance.model_fields_set:
            object.__setattr__(self, "guidance", self.guidance.model_copy(update={"s": scale}))
        return self

    def adapt_for(self, method: Method | str) -> AdaptConfig:
        """Adaptation settings for `method`: presets below explicit file values."""
        method = Method(method)
        preset = ADAPT_PRESETS.get(method)
        if preset is None:
            return self.adapt.model_copy(update={"iterations": 0})
        explicit = self.adapt.model_dump(include=self.adapt.model_fields_set)
        return AdaptConfig(**{**self.adapt.model_dump(), **preset, **explicit, "source": preset["source"]})

    def require_paths(self, *keys: str) -> None:
        for key in keys:
            value = getattr(self, key)
            if value is None or not Path(value).exists():
                raise NotFound(f"path for '{key}' does not exist", {"key": key, "path": str(value)})

    def resolve_output(self, settings: AdirSettings, name: str) -> Path:
        return self.output_dir if self.output_dir is not None else settings.output_root / name


def _parse_value(raw: str) -> Any:
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text: str) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError("expected 'key = value'", {"line": lineno, "text": raw.strip()})
        if key in seen:
            raise ConfigError(f"duplicate key '{key}'", {"key": key, "line": lineno})
        seen.add(key)
        parts = key.split(".")
        if len(parts) > 2:
            raise ConfigError(f"unknown key '{key}'", {"key": key, "line": lineno})
        if len(parts) == 2:
            section = tree.setdefault(parts[0], {})
            if not isinstance(section, dict):
                raise ConfigError(f"'{parts[0]}' is not a section", {"key": key})
            section[parts[1]] = _parse_value(value)
        else:
            if isinstance(tree.get(key), dict):
                raise ConfigError(f"'{key}' is a section", {"key": key})
            tree[key] = _parse_value(value)
    return tree


def build_config(tree: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = ".".join(str(p) for p in first["loc"])
        if first["type"] == "extra_forbidden":
            message = f"unknown key '{key}'"
        else:
            message = f"invalid value for '{key}': {first['msg']}"
        raise ConfigError(message, {"key": key, "errors": exc.error_count()}) from exc


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise NotFound(f"cannot read config: {exc}", {"path": str(path)}) from exc
    return build_config(parse_config_text(text))


def config_fingerprint(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def render_flat(cfg: RunConfig) -> str:
    """The resolved config in the flat file format (round-trips through load_config)."""
    lines = []
    for key, value in cfg.model_dump(mode="json").items():
        if isinstance(value, dict):
            for sub, v in value.items():
                if v is not None:
                    lines.append(f"{key}.{sub} = {json.dumps(v)}")
        elif value is not None:
            lines.append(f"{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"
