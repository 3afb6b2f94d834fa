"""Pipeline configuration (TOML).

Example::

    [paths]
    manifest = "manifest.csv"
    image_root = "images"
    output_root = "out"

    [preprocess]
    target_height = 1024
    target_width = 512

    [model]
    archs = ["convnext_small", "efficientnet_v2_s"]
    dropout_rate = 0.1

    [training]
    epochs = 5

    [training.convnext_small]     # applies to that backbone only
    grad_clip_norm = 1.0

    [sampler]
    batch_size = 8

    [folds]
    k = 4
    seed = 0

Relative paths are resolved against the config file's directory. The
``MAMMO_BENCH_CACHE`` environment variable, when set, overrides
``paths.cache_root`` (where preprocessed PNGs live).
"""

from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, MammoBenchError
from .model import ARCHITECTURES, ModelConfig
from .preprocess import PreprocessConfig
from .training import SamplerConfig, TrainConfig

CACHE_ENV = "MAMMO_BENCH_CACHE"


@dataclass(frozen=True)
class Paths:
    manifest: Path
    image_root: Path
    output_root: Path
    cache_root: Optional[Path] = None

    @property
    def processed_root(self) -> Path:
        env = os.environ.get(CACHE_ENV)
        if env:
            return Path(env)
        return self.cache_root or self.output_root / "processed"


@dataclass(frozen=True)
class FoldsConfig:
    k: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("folds.k must be >= 2")


@dataclass(frozen=True)
class EvaluateConfig:
    threshold: float = 0.5
    per_breast: bool = True

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ConfigError("evaluate.threshold must lie in [0, 1]")


@dataclass(frozen=True)
class ReportConfig:
    svg: bool = False
    fixtures: Optional[Path] = None
    include_reported: bool = True


@dataclass(frozen=True)
class RuntimeConfig:
    deterministic: bool = False
    workers: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    archs: tuple[str, ...] = ARCHITECTURES
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    # per-architecture TrainConfig overrides, e.g. {"convnext_small": {"grad_clip_norm": 1.0}}
    training_overrides: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    folds: FoldsConfig = field(default_factory=FoldsConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)

    def model_config(self, arch: str) -> ModelConfig:
        return replace(self.model, arch=arch)

    def train_config(self, arch: str) -> TrainConfig:
        return replace(self.training, **self.training_overrides.get(arch, {}))

    def to_dict(self) -> dict:
        """Effective settings, JSON-serialisable (echoed into every artifact)."""

        def clean(obj):
            if isinstance(obj, Mapping):
                return {k: clean(v) for k, v in obj.items() if v is not None}
            if isinstance(obj, (list, tuple)):
                return [clean(v) for v in obj]
            if isinstance(obj, Path):
                return str(obj)
            return obj

        d = {
            "paths": asdict(self.paths),
            "preprocess": asdict(self.preprocess),
            "model": {"archs": list(self.archs), **{k: v for k, v in self.model.to_dict().items() if k != "arch"}},
            "training": {**asdict(self.training), **{a: dict(o) for a, o in sorted(self.training_overrides.items())}},
            "sampler": asdict(self.sampler),
            "folds": asdict(self.folds),
            "evaluate": asdict(self.evaluate),
            "report": asdict(self.report),
            "runtime": asdict(self.runtime),
        }
        return clean(d)


def _section(doc: Mapping, name: str, cls, base: Path | None = None, path_keys: tuple[str, ...] = (), **extra):
    raw = dict(doc.get(name, {}))
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(unknown))}")
    for k in path_keys:
        if raw.get(k) is not None:
            p = Path(raw[k])
            raw[k] = p if p.is_absolute() or base is None else base / p
    raw.update(extra)
    try:
        return cls(**raw)
    except (TypeError, ValueError, MammoBenchError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def parse_config(doc: Mapping[str, Any], base_dir: Path | None = None) -> PipelineConfig:
    known = {"paths", "preprocess", "model", "training", "sampler", "folds", "evaluate", "report", "runtime"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    if "paths" not in doc:
        raise ConfigError("missing [paths] section")
    for key in ("manifest", "image_root", "output_root"):
        if not str(doc["paths"].get(key, "")).strip():
            raise ConfigError(f"paths.{key} must be set")
    paths = _section(doc, "paths", Paths, base_dir, ("manifest", "image_root", "output_root", "cache_root"))

    model_raw = dict(doc.get("model", {}))
    archs = model_raw.pop("archs", list(ARCHITECTURES))
    if isinstance(archs, str):
        archs = [archs]
    bad = [a for a in archs if a not in ARCHITECTURES]
    if bad or not archs:
        raise ConfigError(f"model.archs must be drawn from {ARCHITECTURES}, got {archs}")
    model_raw.setdefault("arch", archs[0])
    model = _section({"model": model_raw}, "model", ModelConfig)

    training_raw = dict(doc.get("training", {}))
    overrides = {}
    for arch in ARCHITECTURES:
        if isinstance(training_raw.get(arch), Mapping):
            overrides[arch] = dict(training_raw.pop(arch))
    training = _section({"training": training_raw}, "training", TrainConfig)
    for arch, ov in overrides.items():
        # validate against the merged config so range checks apply
        _section({f"training.{arch}": {**asdict(training), **ov}}, f"training.{arch}", TrainConfig)

    return PipelineConfig(
        paths=paths,
        preprocess=_section(doc, "preprocess", PreprocessConfig),
        archs=tuple(archs),
        model=model,
        training=training,
        training_overrides=overrides,
        sampler=_section(doc, "sampler", SamplerConfig),
        folds=_section(doc, "folds", FoldsConfig),
        evaluate=_section(doc, "evaluate", EvaluateConfig),
        report=_section(doc, "report", ReportConfig, base_dir, ("fixtures",)),
        runtime=_section(doc, "runtime", RuntimeConfig),
    )


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc, path.parent)


def with_overrides(
    cfg: PipelineConfig,
    arch: Optional[str] = None,
    threshold: Optional[float] = None,
    deterministic: Optional[bool] = None,
) -> PipelineConfig:
    if arch is not None:
        if arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {arch!r}")
        cfg = replace(cfg, archs=(arch,), model=replace(cfg.model, arch=arch))
    if threshold is not None:
        cfg = replace(cfg, evaluate=EvaluateConfig(threshold=threshold, per_breast=cfg.evaluate.per_breast))
    if deterministic:
        cfg = replace(cfg, runtime=replace(cfg.runtime, deterministic=True))
    return cfg
