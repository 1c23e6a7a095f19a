#!/usr/bin/env python3
"""
Run configuration
TOML file sections [operator], [potts], [schedule], [solver], [noise] and
[paths], overridden by command-line flags.
"""

import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from admm import NORMALIZATIONS, NU_MODES, SOLVERS, CouplingSchedule, PottsConfig
from neighborhoods import build_system
from operators import ConvolutionKernel, RadonGeometry, SphericalGeometry
from tikhonov import CgConfig

logger = logging.getLogger(__name__)

__version__ = "1.0.0"

OPERATOR_KINDS = ("radon", "spherical", "blur", "identity")
BLUR_KINDS = ("gaussian", "motion")
PHANTOMS = ("shepp-logan", "shepp-logan-original", "geometric")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class OperatorSpec:
    kind: str = "radon"
    angles: int = 7
    detectors: Optional[int] = None
    radii: int = 256
    blur: str = "gaussian"
    sigma: float = 1.5
    length: int = 15

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ConfigError(f"Unknown operator kind '{self.kind}'; expected one of {OPERATOR_KINDS}")
        if self.angles < 1 or self.radii < 1:
            raise ConfigError(f"angles and radii must be positive, got {self.angles} and {self.radii}")
        if self.detectors is not None and self.detectors < 1:
            raise ConfigError(f"detectors must be positive, got {self.detectors}")
        if self.blur not in BLUR_KINDS:
            raise ConfigError(f"Unknown blur kind '{self.blur}'; expected one of {BLUR_KINDS}")

    def geometry(self, image_size: int):
        if self.kind == "radon":
            return RadonGeometry.uniform(self.angles, image_size, self.detectors)
        if self.kind == "spherical":
            return SphericalGeometry.uniform(self.angles, self.radii)
        return None

    def kernel(self) -> Optional[ConvolutionKernel]:
        if self.kind != "blur":
            return None
        if self.blur == "gaussian":
            return ConvolutionKernel.gaussian(self.sigma)
        return ConvolutionKernel.motion(self.length)


@dataclass(frozen=True)
class PottsSection:
    gamma: float = 0.05
    level: int = 1
    stop_tolerance: float = 1e-3
    max_iterations: int = 250
    # merge tolerance for label extraction, relative to the value range of the result
    label_tolerance: float = 1e-2
    # gamma relative to ||f||^2
    relative_gamma: bool = False


@dataclass(frozen=True)
class ScheduleSection:
    mu0: float = 1e-7
    tau: float = 2.01
    nu_mode: str = "zero"
    # 'data' multiplies mu_k and nu_k by ||f||^2
    normalization: str = "data"


@dataclass(frozen=True)
class SolverSection:
    name: str = "cg"
    cg_tolerance: float = 1e-6
    cg_max_iterations: int = 500


@dataclass(frozen=True)
class NoiseSection:
    level: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class PathsSection:
    input: Optional[str] = None
    output: str = "output"
    ground_truth: Optional[str] = None


SECTIONS = {
    "operator": OperatorSpec,
    "potts": PottsSection,
    "schedule": ScheduleSection,
    "solver": SolverSection,
    "noise": NoiseSection,
    "paths": PathsSection,
}


@dataclass(frozen=True)
class RunConfig:
    operator: OperatorSpec = field(default_factory=OperatorSpec)
    potts: PottsSection = field(default_factory=PottsSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    solver: SolverSection = field(default_factory=SolverSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    paths: PathsSection = field(default_factory=PathsSection)
    image_size: int = 128
    phantom: str = "shepp-logan"
    threads: int = 1

    def __post_init__(self):
        if self.image_size < 16:
            raise ConfigError(f"image_size must be at least 16, got {self.image_size}")
        if self.phantom not in PHANTOMS:
            raise ConfigError(f"Unknown phantom '{self.phantom}'; expected one of {PHANTOMS}")
        if self.threads < 1:
            raise ConfigError(f"threads must be positive, got {self.threads}")
        if self.solver.name not in SOLVERS:
            raise ConfigError(f"Unknown solver '{self.solver.name}'; expected one of {SOLVERS}")
        if self.schedule.nu_mode not in NU_MODES:
            raise ConfigError(f"Unknown nu_mode '{self.schedule.nu_mode}'; expected one of {NU_MODES}")
        if self.schedule.normalization not in NORMALIZATIONS:
            raise ConfigError(f"Unknown normalization '{self.schedule.normalization}'; expected one of {NORMALIZATIONS}")
        if self.noise.level < 0:
            raise ConfigError(f"Noise level must be nonnegative, got {self.noise.level}")

    def potts_config(self) -> PottsConfig:
        try:
            return PottsConfig(
                gamma=self.potts.gamma,
                neighborhood=build_system(self.potts.level),
                stop_tolerance=self.potts.stop_tolerance,
                max_iterations=self.potts.max_iterations,
                label_tolerance=self.potts.label_tolerance,
                relative_gamma=self.potts.relative_gamma,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def coupling_schedule(self) -> CouplingSchedule:
        try:
            return CouplingSchedule(self.schedule.mu0, self.schedule.tau, self.schedule.nu_mode,
                                    self.schedule.normalization)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def cg_config(self) -> CgConfig:
        try:
            return CgConfig(max_iterations=self.solver.cg_max_iterations, tolerance=self.solver.cg_tolerance)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _build_section(name: str, values: Dict[str, Any]):
    cls = SECTIONS[name]
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"Unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid [{name}] section: {e}") from e


def from_mapping(data: Dict[str, Any]) -> RunConfig:
    """Build a RunConfig from a nested mapping as read from TOML."""
    data = dict(data)
    kwargs: Dict[str, Any] = {}
    for name in SECTIONS:
        section = data.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        kwargs[name] = _build_section(name, section)
    top_level = {"image_size", "phantom", "threads"}
    unknown = set(data) - top_level
    if unknown:
        raise ConfigError(f"Unknown top-level keys: {sorted(unknown)}")
    kwargs.update(data)
    return RunConfig(**kwargs)


def load_config(path: Optional[Path]) -> RunConfig:
    """Read a TOML run configuration; no path gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    logger.info(f"Loaded configuration from {path}")
    return from_mapping(data)


def apply_overrides(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """
    Override configuration values.

    Args:
        config: base configuration
        overrides: keys 'section.field' or top-level field names; None values are skipped

    Returns:
        New RunConfig
    """
    sections: Dict[str, Dict[str, Any]] = {}
    top: Dict[str, Any] = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"Unknown configuration section '{section}'")
            sections.setdefault(section, {})[name] = value
        else:
            top[key] = value
    for section, values in sections.items():
        current = asdict(getattr(config, section))
        current.update(values)
        top[section] = _build_section(section, current)
    try:
        return replace(config, **top)
    except TypeError as e:
        raise ConfigError(f"Invalid override: {e}") from e
