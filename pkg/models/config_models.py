"""
File schemas for parameters, claim sets and experiments
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from models.data_models import ClaimKind, ClaimSet, ClaimSpec, HestonParams, SimConfig
from models.errors import ConfigError, InvalidParameters


class ParamsFile(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    kappa: float
    lam: float = Field(alias="lambda")
    rho: float
    sigma: float
    v0: float
    s0: float = 100.0
    maturity: float = 1.0

    def to_params(self) -> HestonParams:
        return HestonParams(kappa=self.kappa, lam=self.lam, rho=self.rho, sigma=self.sigma,
                            v0=self.v0, s0=self.s0, maturity=self.maturity)


class ClaimEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["variance_swap", "call", "put"]
    strike: Optional[float] = None
    strip_R: Optional[float] = None
    swap_k: Optional[float] = None

    def to_spec(self) -> ClaimSpec:
        return ClaimSpec(kind=ClaimKind(self.kind), strike=self.strike,
                         strip_R=self.strip_R, swap_k=self.swap_k)


class ClaimsFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    target: ClaimEntry
    options: List[ClaimEntry]

    def to_claim_set(self) -> ClaimSet:
        return ClaimSet(self.target.to_spec(), [o.to_spec() for o in self.options])


class MCSection(BaseModel):
    paths: int = 100_000
    steps: int = 500
    seed: int = 42
    richardson: bool = True


class ExperimentFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    params: str
    claims: Optional[str] = None
    methods: List[str] = ["leaps_and_bounds", "greedy_forward", "lasso"]
    d_max: Optional[int] = None
    lambda_grid: Optional[List[float]] = None
    rho_grid: Optional[List[float]] = None
    nonneg: bool = False
    out: str = "out"
    cache: str = ".cache"
    mc: MCSection = MCSection()
    constraints: Optional[List[List[float]]] = None
    d_list: Optional[List[int]] = None
    time_nodes: int = 64
    workers: int = 1


def _read_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e


def load_params(path: str) -> HestonParams:
    try:
        return ParamsFile.model_validate(_read_json(path)).to_params()
    except (ValidationError, InvalidParameters) as e:
        raise ConfigError(f"{path}: {e}") from e


def load_claims(path: str) -> ClaimSet:
    try:
        return ClaimsFile.model_validate(_read_json(path)).to_claim_set()
    except (ValidationError, InvalidParameters) as e:
        raise ConfigError(f"{path}: {e}") from e


def load_experiment(path: str) -> ExperimentFile:
    try:
        return ExperimentFile.model_validate(_read_json(path))
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e


METHODS = ("brute_force", "leaps_and_bounds", "greedy_forward", "greedy_backward", "lasso")

DEFAULT_RHO_GRID = [round(-0.95 + 0.095 * i, 3) for i in range(21)]


@dataclass
class ExperimentConfig:
    params_path: str
    claims_path: Optional[str] = None
    methods: List[str] = field(default_factory=lambda: ["leaps_and_bounds", "greedy_forward", "lasso"])
    d_max: Optional[int] = None
    lambda_grid: Optional[List[float]] = None
    rho_grid: List[float] = field(default_factory=lambda: list(DEFAULT_RHO_GRID))
    nonneg: bool = False
    out_dir: str = "out"
    cache_dir: str = ".cache"
    sim: SimConfig = field(default_factory=SimConfig)
    constraints: Optional[List[List[float]]] = None
    workers: int = 1
    d_list: Optional[List[int]] = None
    time_nodes: int = 64
    lb_timeout: Optional[float] = None
    save_residuals: bool = False

    def validate(self, n: int, allow_unit_rho: bool = False):
        if not Path(self.params_path).is_file():
            raise ConfigError(f"params file not found: {self.params_path}")
        if self.claims_path is not None and not Path(self.claims_path).is_file():
            raise ConfigError(f"claims file not found: {self.claims_path}")
        if self.d_max is not None and not 0 <= self.d_max <= n:
            raise ConfigError(f"d range must lie in [0, {n}], got d_max={self.d_max}")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        for d in self.d_list or []:
            if not 0 <= d <= n:
                raise ConfigError(f"d={d} outside [0, {n}]")
        for rho in self.rho_grid:
            limit_ok = abs(rho) <= 1 if allow_unit_rho else abs(rho) < 1
            if not limit_ok:
                raise ConfigError(f"rho grid value {rho} outside the admissible range")
        if self.constraints is not None:
            for p in self.constraints:
                if len(p) != n:
                    raise ConfigError(f"constraint vector of length {len(p)} for {n} options")
