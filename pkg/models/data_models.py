"""
Data models for the semi-static hedging system
"""
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.errors import InvalidParameters


@dataclass(frozen=True)
class HestonParams:
    """Heston model constants.

    kappa is the long-run variance level and lam the mean-reversion speed,
    i.e. dV = -lam (V - kappa) dt + sigma sqrt(V) dW.
    """
    kappa: float
    lam: float
    rho: float
    sigma: float
    v0: float
    s0: float = 100.0
    maturity: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidParameters(f"lambda must be positive, got {self.lam}")
        if not self.sigma > 0:
            raise InvalidParameters(f"sigma must be positive, got {self.sigma}")
        if not self.kappa > 0:
            raise InvalidParameters(f"kappa must be positive, got {self.kappa}")
        if not self.v0 >= 0:
            raise InvalidParameters(f"v0 must be non-negative, got {self.v0}")
        if not self.s0 > 0:
            raise InvalidParameters(f"s0 must be positive, got {self.s0}")
        if not self.maturity > 0:
            raise InvalidParameters(f"maturity must be positive, got {self.maturity}")
        if not abs(self.rho) <= 1:
            raise InvalidParameters(f"rho must lie in [-1, 1], got {self.rho}")

    @property
    def x0(self) -> float:
        return math.log(self.s0)

    @property
    def feller_ratio(self) -> float:
        return 2 * self.lam * self.kappa / self.sigma ** 2

    def with_rho(self, rho: float) -> "HestonParams":
        return replace(self, rho=rho)

    def to_dict(self) -> Dict[str, float]:
        return {
            "kappa": self.kappa,
            "lambda": self.lam,
            "rho": self.rho,
            "sigma": self.sigma,
            "v0": self.v0,
            "s0": self.s0,
            "maturity": self.maturity,
        }

    @classmethod
    def benchmark(cls) -> "HestonParams":
        return cls(kappa=0.0354, lam=1.3253, rho=-0.7165, sigma=0.3877,
                   v0=0.0174, s0=100.0, maturity=1.0)


@dataclass(frozen=True)
class CharExponents:
    phi: Any
    psi: Any
    dphi_dw: Any
    dpsi_dw: Any


class ClaimKind(str, Enum):
    VARIANCE_SWAP = "variance_swap"
    CALL = "call"
    PUT = "put"


@dataclass(frozen=True)
class ClaimSpec:
    kind: ClaimKind
    strike: Optional[float] = None
    strip_R: Optional[float] = None
    swap_k: Optional[float] = None

    def __post_init__(self):
        if self.kind == ClaimKind.VARIANCE_SWAP:
            return
        if self.strike is None or not self.strike > 0:
            raise InvalidParameters(f"{self.kind.value} needs a positive strike, got {self.strike}")
        if self.strip_R is not None:
            if self.kind == ClaimKind.CALL and not self.strip_R > 1:
                raise InvalidParameters(f"call strip must satisfy R > 1, got {self.strip_R}")
            if self.kind == ClaimKind.PUT and not self.strip_R < 0:
                raise InvalidParameters(f"put strip must satisfy R < 0, got {self.strip_R}")

    @property
    def is_option(self) -> bool:
        return self.kind != ClaimKind.VARIANCE_SWAP

    @property
    def label(self) -> str:
        if not self.is_option:
            return "swap"
        return f"{'C' if self.kind == ClaimKind.CALL else 'P'}{self.strike:g}"

    def with_strip(self, strip_R: float) -> "ClaimSpec":
        return replace(self, strip_R=strip_R)

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"kind": self.kind.value}
        if self.strike is not None:
            d["strike"] = self.strike
        if self.strip_R is not None:
            d["strip_R"] = self.strip_R
        if self.swap_k is not None:
            d["swap_k"] = self.swap_k
        return d


@dataclass
class ClaimSet:
    target: ClaimSpec
    supplementary: List[ClaimSpec]

    def __post_init__(self):
        if self.target.kind != ClaimKind.VARIANCE_SWAP:
            raise InvalidParameters("the target claim must be a variance swap")
        seen = set()
        for c in self.supplementary:
            if not c.is_option:
                raise InvalidParameters("supplementary claims must be puts or calls")
            key = (c.kind, c.strike)
            if key in seen:
                raise InvalidParameters(f"duplicate supplementary claim {c.label}")
            seen.add(key)

    @property
    def n(self) -> int:
        return len(self.supplementary)

    @property
    def strikes(self) -> List[float]:
        return [c.strike for c in self.supplementary]

    @property
    def labels(self) -> List[str]:
        return [c.label for c in self.supplementary]

    def subset(self, indices: Sequence[int]) -> "ClaimSet":
        return ClaimSet(self.target, [self.supplementary[i] for i in indices])

    @classmethod
    def standard_grid(cls, k_min: float = 50.0, k_max: float = 150.0, dk: float = 5.0,
                   spot: float = 100.0) -> "ClaimSet":
        """OTM puts below spot, calls from spot upwards."""
        n_strikes = int(round((k_max - k_min) / dk)) + 1
        options = []
        for i in range(n_strikes):
            k = k_min + i * dk
            kind = ClaimKind.PUT if k < spot else ClaimKind.CALL
            options.append(ClaimSpec(kind=kind, strike=k))
        return cls(ClaimSpec(ClaimKind.VARIANCE_SWAP), options)


@dataclass
class MomentData:
    A: float
    B: np.ndarray
    C: np.ndarray
    k_star: float
    swap_k: float
    labels: List[str] = field(default_factory=list)
    strikes: List[float] = field(default_factory=list)
    quad_meta: Dict[str, Any] = field(default_factory=dict)
    params_hash: str = ""

    @property
    def n(self) -> int:
        return len(self.B)

    def subset(self, indices: Sequence[int]) -> "MomentData":
        idx = list(indices)
        return MomentData(
            A=self.A,
            B=self.B[idx].copy(),
            C=self.C[np.ix_(idx, idx)].copy(),
            k_star=self.k_star,
            swap_k=self.swap_k,
            labels=[self.labels[i] for i in idx] if self.labels else [],
            strikes=[self.strikes[i] for i in idx] if self.strikes else [],
            quad_meta={},
            params_hash=self.params_hash,
        )


@dataclass
class HedgeSolution:
    v: np.ndarray
    c: float
    eps2: float
    rel_err: float
    active_set: List[int]
    method: str
    kkt_residual: Optional[float] = None

    @property
    def support(self) -> List[int]:
        return [i for i, x in enumerate(self.v) if x != 0.0]


@dataclass
class SelectionStep:
    d: int
    support: Tuple[int, ...]
    v: np.ndarray
    eps2: float
    rel_err: float
    method: str
    wall_time: float
    lam: Optional[float] = None
    certified: bool = True
    converged: bool = True


@dataclass
class SelectionPath:
    method: str
    steps: List[SelectionStep] = field(default_factory=list)

    def at(self, d: int) -> SelectionStep:
        """Last recorded step of cardinality d."""
        for step in reversed(self.steps):
            if step.d == d:
                return step
        raise KeyError(f"no step with d={d} in {self.method} path")

    def errors(self) -> Dict[int, float]:
        return {s.d: s.eps2 for s in self.steps}


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    n_steps: int = 500
    seed: int = 42
    scheme: str = "full_truncation_euler"
    batch_size: int = 10_000
    n_u_nodes: int = 96
    jackknife_groups: int = 20
    richardson: bool = True

    def __post_init__(self):
        if self.n_paths < 1000:
            raise InvalidParameters(f"at least 1000 paths are required, got {self.n_paths}")
        if self.n_steps < 1:
            raise InvalidParameters("n_steps must be positive")
        if self.scheme != "full_truncation_euler":
            raise InvalidParameters(f"unknown scheme {self.scheme!r}")
        if self.jackknife_groups < 2:
            raise InvalidParameters("jackknife needs at least two groups")


@dataclass
class PathBatch:
    times: np.ndarray
    X: np.ndarray
    V: np.ndarray


@dataclass
class ResidualSample:
    L0: np.ndarray
    L: np.ndarray
    gains0: np.ndarray
    mean: np.ndarray
    mean_se: np.ndarray
    cov: np.ndarray
    cov_se: np.ndarray
    L0_coarse: Optional[np.ndarray] = None
    L_coarse: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return len(self.L0)

    @property
    def A_hat(self) -> float:
        return float(self.cov[0, 0])

    @property
    def B_hat(self) -> np.ndarray:
        return self.cov[1:, 0]

    @property
    def C_hat(self) -> np.ndarray:
        return self.cov[1:, 1:]
