"""
Pipeline configuration for brep_fitter.

Provides functionality to:
- Aggregate every module configuration into one PipelineConfig
- Read a TOML configuration document with one table per section
- Apply environment overrides (BREP_FITTER_*) loaded through python-dotenv
- Apply command-line overrides and propagate the global seed
"""

from __future__ import annotations

import dataclasses
import os
import tomllib
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

from brep_fitter.assembly import AssemblyConfig
from brep_fitter.fitting import RansacConfig
from brep_fitter.intersection import TrimConfig
from brep_fitter.losses import Stage1LossConfig, TripletConfig
from brep_fitter.metrics import MetricConfig
from brep_fitter.splat import SplatConfig
from brep_fitter.utils import ConfigError, require_positive

__all__ = [
    "ENV_SEED",
    "ENV_THREADS",
    "ENV_VERBOSITY",
    "ConfigError",
    "NormalsConfig",
    "PipelineConfig",
    "TessellationConfig",
    "load_config",
]

ENV_SEED = "BREP_FITTER_SEED"
ENV_THREADS = "BREP_FITTER_THREADS"
ENV_VERBOSITY = "BREP_FITTER_VERBOSITY"

_ERR_UNKNOWN_KEY = "unknown config key {key}"
_ERR_NOT_TABLE = "config section {section} must be a table"
_ERR_TYPE = "{key} must be {expected}, got {value!r}"
_ERR_ENV = "{name} must be an integer, got {value!r}"
_ERR_READ = "cannot read config file {path}: {reason}"


@dataclass(frozen=True)
class NormalsConfig:
    """
    Normal estimation.

    Attributes:
        k: Neighbors per PCA neighborhood
        per_patch: Restrict neighborhoods to each point's own patch
    """

    k: int = 16
    per_patch: bool = True

    def __post_init__(self) -> None:
        require_positive("normals", k=self.k)


@dataclass(frozen=True)
class TessellationConfig:
    """
    OBJ preview tessellation.

    Attributes:
        density: Chart grid points per axis of each face
        samples_per_edge: Samples per edge loop and polyline
    """

    density: int = 32
    samples_per_edge: int = 64

    def __post_init__(self) -> None:
        require_positive("tessellation", density=self.density, samples_per_edge=self.samples_per_edge)


@dataclass(frozen=True)
class PipelineConfig:
    """
    Every configurable value of the fit, evaluation and verification commands.

    Attributes:
        ransac: Primitive fitting
        trim: Intersection trimming and corners
        assembly: Snapping and loop closure
        metrics: Segmentation and CAD metrics
        triplet: Triplet sampling
        stage1: First-stage loss weights
        splat: Splat sampling and gradient checks
        normals: Normal estimation
        tessellation: OBJ preview density
        seed: Global seed, copied into ransac.seed and used for triplet sampling
        threads: Worker threads for per-patch and per-pair stages
        verbosity: 0 warnings, 1 info, 2 debug
    """

    ransac: RansacConfig = field(default_factory=RansacConfig)
    trim: TrimConfig = field(default_factory=TrimConfig)
    assembly: AssemblyConfig = field(default_factory=AssemblyConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    triplet: TripletConfig = field(default_factory=TripletConfig)
    stage1: Stage1LossConfig = field(default_factory=Stage1LossConfig)
    splat: SplatConfig = field(default_factory=SplatConfig)
    normals: NormalsConfig = field(default_factory=NormalsConfig)
    tessellation: TessellationConfig = field(default_factory=TessellationConfig)
    seed: int = 0
    threads: int = 4
    verbosity: int = 0

    def __post_init__(self) -> None:
        require_positive("pipeline", threads=self.threads)
        if self.verbosity < 0:
            msg = f"verbosity must be >= 0, got {self.verbosity}"
            raise ConfigError(msg)

    def with_seed(self, seed: int) -> PipelineConfig:
        """Copy with a new global seed propagated into the RANSAC section."""
        return dataclasses.replace(self, seed=seed, ransac=dataclasses.replace(self.ransac, seed=seed))


_SECTIONS: dict[str, type[Any]] = {
    "ransac": RansacConfig,
    "trim": TrimConfig,
    "assembly": AssemblyConfig,
    "metrics": MetricConfig,
    "triplet": TripletConfig,
    "stage1": Stage1LossConfig,
    "splat": SplatConfig,
    "normals": NormalsConfig,
    "tessellation": TessellationConfig,
}
_TOP_LEVEL = ("seed", "threads", "verbosity")


def _coerce(key: str, value: Any, expected: Any) -> Any:
    """Check a TOML value against a dataclass field type; ints widen to floats."""
    if expected is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(_ERR_TYPE.format(key=key, expected="a boolean", value=value))
    if expected is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(_ERR_TYPE.format(key=key, expected="an integer", value=value))
    if expected is float:
        if isinstance(value, int | float) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(_ERR_TYPE.format(key=key, expected="a number", value=value))
    return value


def _build_section(name: str, values: Any) -> Any:
    if not isinstance(values, dict):
        raise ConfigError(_ERR_NOT_TABLE.format(section=name))
    cls = _SECTIONS[name]
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(_ERR_UNKNOWN_KEY.format(key=f"{name}.{key}"))
        kwargs[key] = _coerce(f"{name}.{key}", value, hints[key])
    return cls(**kwargs)


def _read_document(path: Path) -> dict[str, Any]:
    try:
        with path.open("rb") as f:
            return tomllib.load(f)
    except OSError as e:
        raise ConfigError(_ERR_READ.format(path=path, reason=e.strerror or e)) from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(_ERR_READ.format(path=path, reason=e)) from e


def _env_int(name: str) -> int | None:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(_ERR_ENV.format(name=name, value=raw)) from e


def load_config(
    path: Path | None = None,
    *,
    seed: int | None = None,
    threads: int | None = None,
    verbosity: int | None = None,
    env_file: Path | None = None,
) -> PipelineConfig:
    """
    Build the pipeline configuration.

    Precedence, lowest first: dataclass defaults, the TOML document at
    path, BREP_FITTER_SEED/THREADS/VERBOSITY from the environment (and a
    .env file), then the keyword overrides.

    Args:
        path: Optional TOML document with one table per section
        seed: Global seed override
        threads: Worker thread override
        verbosity: Log verbosity override
        env_file: Explicit .env file; defaults to .env in the working directory

    Returns:
        Validated PipelineConfig

    Raises:
        ConfigError: On unreadable files, unknown keys or invalid values
    """
    document = _read_document(path) if path is not None else {}
    sections: dict[str, Any] = {}
    top: dict[str, int] = {}
    for key, value in document.items():
        if key in _SECTIONS:
            sections[key] = _build_section(key, value)
        elif key in _TOP_LEVEL:
            top[key] = _coerce(key, value, int)
        else:
            raise ConfigError(_ERR_UNKNOWN_KEY.format(key=key))

    env_path = env_file if env_file is not None else Path.cwd() / ".env"
    if env_path.exists():
        load_dotenv(env_path)
    env = {
        "seed": _env_int(ENV_SEED),
        "threads": _env_int(ENV_THREADS),
        "verbosity": _env_int(ENV_VERBOSITY),
    }
    flags = {"seed": seed, "threads": threads, "verbosity": verbosity}
    for layer in (env, flags):
        top.update({k: v for k, v in layer.items() if v is not None})

    cfg = PipelineConfig(**sections, **{k: v for k, v in top.items() if k != "seed"})
    if "seed" in top:
        cfg = cfg.with_seed(top["seed"])
    return cfg
