"""
Experiment Configuration - TOML documents validated into pydantic models
"""

import hashlib
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .constants import (
    DEFAULT_ALPHA, DEFAULT_CFL_GUARD, DEFAULT_FLOW_DT, DEFAULT_HI, DEFAULT_LO, DEFAULT_R0,
    DEFAULT_THETA_REG, DEFAULT_TOLERANCES, DEFAULT_XI_BINS, DEFAULT_XI_MARGIN, MIN_CELLS, ScenarioKind,
)
from .errors import ConfigError

logger = logging.getLogger(__name__)

ScenarioKindName = Literal[
    "contraction", "positivity-mass", "cocycle", "noise-continuity",
    "vanishing-viscosity", "flow-stability", "estimate-suite", "heat-oracle",
]


class Section(BaseModel):
    """Common settings of all config sections"""
    model_config = ConfigDict(extra='forbid', frozen=True)


class ScenarioSection(Section):
    id: str
    kind: ScenarioKindName
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    workers: int = Field(1, ge=1)


class InitialDataSection(Section):
    kind: Literal["bump", "sine", "zero", "signed_bump", "constant"] = "bump"
    center: float = 0.5
    width: float = Field(0.2, gt=0.0)
    height: float = 1.0
    k: int = Field(1, ge=1)
    value: float = 0.0
    offset: Optional[float] = None


class PdeSection(Section):
    m: float = Field(2.0, gt=0.0)
    eta: float = Field(0.0, ge=0.0, lt=1.0)
    dt: float = Field(1e-4, gt=0.0)
    cells: int = Field(128, ge=MIN_CELLS)
    T: float = Field(0.1, gt=0.0)
    lo: float = DEFAULT_LO
    hi: float = DEFAULT_HI
    theta_reg: float = Field(DEFAULT_THETA_REG, gt=0.0)
    flux_scheme: Literal["upwind", "central"] = "upwind"
    cfl_guard: float = Field(DEFAULT_CFL_GUARD, gt=0.0, lt=1.0)
    record_count: int = Field(11, ge=2)
    initial: InitialDataSection = InitialDataSection()
    initial_alt: Optional[InitialDataSection] = None
    xi_bins: int = Field(DEFAULT_XI_BINS, ge=2)
    xi_margin: float = Field(DEFAULT_XI_MARGIN, ge=0.0)
    eta_ladder: List[float] = Field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    eps_ladder: List[float] = Field(default_factory=list)
    ladder_levels: int = Field(5, ge=1)
    shift_fraction: float = Field(1.0 / 3.0, ge=0.0, lt=1.0)
    refine_levels: int = Field(3, ge=2)
    perturbation: float = Field(0.3, gt=0.0)

    @model_validator(mode='after')
    def _check_interval(self):
        if not self.lo < self.hi:
            raise ValueError(f"lo={self.lo} must be below hi={self.hi}")
        if self.xi_bins % 2:
            raise ValueError(f"xi_bins must be even, got {self.xi_bins}")
        return self


class CoefficientSection(Section):
    kind: Literal["zero", "linear-in-xi", "basis-product"] = "basis-product"
    sigma: str = "identity"
    basis: List[str] = Field(default_factory=lambda: ["sin2_1"])
    amplitude: float = 1.0
    smoothness_budget: float = Field(1.0, ge=0.0)
    kappa: float = Field(0.1, gt=0.0)


class PathSection(Section):
    source: Literal["brownian", "schauder", "file", "zero"] = "brownian"
    file: Optional[str] = None
    steps: int = Field(256, ge=1)
    horizon: Optional[float] = Field(None, gt=0.0)
    epsilon: Optional[float] = Field(None, gt=0.0)
    alpha: float = Field(DEFAULT_ALPHA, gt=1.0 / 3.0, le=1.0)
    r0: float = Field(DEFAULT_R0, gt=0.0)

    @model_validator(mode='after')
    def _check_file(self):
        if self.source == "file" and not self.file:
            raise ValueError("path.source = 'file' needs path.file")
        return self


class FlowSection(Section):
    dt: float = Field(DEFAULT_FLOW_DT, gt=0.0)
    horizon: Optional[float] = Field(None, gt=0.0)
    strict_alignment: bool = False
    points: int = Field(32, ge=2)
    xi_max: float = Field(1.0, gt=0.0)
    xi_samples: List[float] = Field(default_factory=lambda: [-1.0, -0.1, 0.1, 1.0])
    levels: List[int] = Field(default_factory=lambda: [3, 4, 5, 6, 7, 8])
    velocity_magnitudes: List[float] = Field(default_factory=lambda: [1e-2, 1.0, 1e2])
    velocity_alpha: float = Field(0.5, gt=0.0, le=1.0)


class ToleranceSection(Section):
    contraction: float = Field(DEFAULT_TOLERANCES['contraction'], ge=0.0)
    negativity: float = Field(DEFAULT_TOLERANCES['negativity'], ge=0.0)
    mass_drift: float = Field(DEFAULT_TOLERANCES['mass_drift'], ge=0.0)
    cocycle_factor: float = Field(DEFAULT_TOLERANCES['cocycle_factor'], gt=0.0)
    noise_finest_relative: float = Field(DEFAULT_TOLERANCES['noise_finest_relative'], gt=0.0)
    stability_factor: float = Field(DEFAULT_TOLERANCES['stability_factor'], ge=1.0)
    inverse_residual: float = Field(DEFAULT_TOLERANCES['inverse_residual'], gt=0.0)
    det_jacobian: float = Field(DEFAULT_TOLERANCES['det_jacobian'], gt=0.0)
    boundary_standstill: float = Field(DEFAULT_TOLERANCES['boundary_standstill'], gt=0.0)
    boundary_flatness: float = Field(DEFAULT_TOLERANCES['boundary_flatness'], gt=0.0)
    perturbation_factor: float = Field(DEFAULT_TOLERANCES['perturbation_factor'], gt=0.0)
    poincare_relative: float = Field(DEFAULT_TOLERANCES['poincare_relative'], gt=0.0)
    residual_ratio_min: float = Field(DEFAULT_TOLERANCES['residual_ratio_min'], gt=0.0)
    residual_ratio_max: float = Field(DEFAULT_TOLERANCES['residual_ratio_max'], gt=0.0)
    heat_l2: float = Field(DEFAULT_TOLERANCES['heat_l2'], gt=0.0)


class ExperimentConfig(Section):
    """A complete experiment document"""
    scenario: ScenarioSection
    pde: PdeSection = PdeSection()
    coefficient: CoefficientSection = CoefficientSection()
    path: PathSection = PathSection()
    flow: FlowSection = FlowSection()
    tolerances: ToleranceSection = ToleranceSection()

    @property
    def path_horizon(self) -> float:
        return self.path.horizon if self.path.horizon is not None else self.pde.T

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump"""
        canonical = json.dumps(self.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def parse_config(data: dict) -> ExperimentConfig:
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid experiment config:\n{e}") from e
    if config.scenario.kind not in ScenarioKind.ALL:
        raise ConfigError(f"Unknown scenario kind '{config.scenario.kind}'")
    if config.pde.T > config.path_horizon:
        raise ConfigError(f"pde.T={config.pde.T} exceeds the path horizon {config.path_horizon}")
    return config


def load_config(filepath: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a TOML experiment document"""
    filepath = Path(filepath)
    try:
        with open(filepath, 'rb') as f:
            data = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"Could not read config {filepath}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Malformed config {filepath}: {e}") from e
    config = parse_config(data)
    logger.debug("Loaded config %s (hash %s)", filepath, config.config_hash()[:12])
    return config
