"""
Monte-Carlo oracle: full-truncation Euler paths of (X, V), the hedging
strategies integrated pathwise, and the resulting residuals L^0, L^i
with jackknife standard errors. The O(dt) bias of the discrete hedge is
removed by Richardson extrapolation against a coupled half-resolution path.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from models.data_models import ClaimSet, HestonParams, MomentData, PathBatch, ResidualSample, SimConfig
from models.errors import NonFiniteResult
from pricing.claims import laplace_transform, payoff, prepare_claim_set
from pricing.fourier_engine import option_price, run_tasks
from pricing.heston_model import char_exponents, check_moment_condition, swap_rate

logger = logging.getLogger(__name__)

U_NODE_SCALE = 10.0


def time_grid(params: HestonParams, cfg: SimConfig, even: bool = False) -> np.ndarray:
    n = max(1, int(round(cfg.n_steps * params.maturity)))
    if even:
        n += n % 2
    return np.linspace(0.0, params.maturity, n + 1)


def _rng_streams(cfg: SimConfig) -> List[Tuple[np.random.SeedSequence, int]]:
    n_batches = math.ceil(cfg.n_paths / cfg.batch_size)
    children = np.random.SeedSequence(cfg.seed).spawn(n_batches)
    sizes = [cfg.batch_size] * (n_batches - 1) + [cfg.n_paths - cfg.batch_size * (n_batches - 1)]
    return list(zip(children, sizes))


def _euler_step(x, v, dt, z1, z2, params: HestonParams):
    vp = np.maximum(v, 0.0)
    sq = np.sqrt(vp * dt)
    x_next = x - 0.5 * vp * dt + sq * (params.rho * z1 + math.sqrt(1 - params.rho ** 2) * z2)
    v_next = v - params.lam * (vp - params.kappa) * dt + params.sigma * sq * z1
    return x_next, v_next


def simulate_paths(params: HestonParams, cfg: SimConfig, n_paths: Optional[int] = None,
                   seed_seq: Optional[np.random.SeedSequence] = None) -> PathBatch:
    """Full-truncation Euler paths; V keeps its untruncated value, V+ drives drift and diffusion."""
    times = time_grid(params, cfg)
    n_paths = cfg.n_paths if n_paths is None else n_paths
    rng = np.random.Generator(np.random.Philox(seed_seq or np.random.SeedSequence(cfg.seed)))
    X = np.empty((n_paths, len(times)))
    V = np.empty((n_paths, len(times)))
    X[:, 0] = params.x0
    V[:, 0] = params.v0
    for k, dt in enumerate(np.diff(times)):
        z = rng.standard_normal((2, n_paths))
        X[:, k + 1], V[:, k + 1] = _euler_step(X[:, k], V[:, k], dt, z[0], z[1], params)
    return PathBatch(times=times, X=X, V=V)


def strategy_theta0(t, S, V, params: HestonParams):
    """Units of stock in the variance-swap hedge; independent of V."""
    t = np.asarray(t, dtype=float)
    return params.rho * params.sigma * (1 - np.exp(-params.lam * (params.maturity - t))) / (params.lam * np.asarray(S))


def strategy_theta_u(t, X, V, u, params: HestonParams):
    """Units of stock hedging the exponential claim exp(u X_T)."""
    check_moment_condition(float(np.real(u)), params.maturity, params)
    ce = char_exponents(params.maturity - np.asarray(t, dtype=float), u, 0.0, params)
    X = np.asarray(X, dtype=float)
    h = np.exp(u * X + ce.phi + ce.psi * np.maximum(np.asarray(V, dtype=float), 0.0))
    return h * (u + params.rho * params.sigma * ce.psi) / np.exp(X)


def u_nodes(n_nodes: int, scale: float = U_NODE_SCALE) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes y in (0, inf) and weights from Gauss-Legendre under y = scale s / (1 - s)."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    s = 0.5 * (x + 1)
    return scale * s / (1 - s), 0.5 * w * scale / (1 - s) ** 2


@dataclass
class StrategyTable:
    """Strip strategy coefficients for claims grouped by abscissa R.

    For group g the combined position of output o at step k and state (X, V) is
    Re sum_m coef[g][k, o, m] exp((u[g][m] - 1) X + psi[g][k, m] V).
    """
    u: List[np.ndarray]
    psi: List[np.ndarray]
    coef: List[np.ndarray]

    def positions(self, k: int, x: np.ndarray, v: np.ndarray, n_out: int) -> np.ndarray:
        # the strategies are functions of V+, like the Euler coefficients
        v = np.maximum(v, 0.0)
        theta = np.zeros((len(x), n_out))
        for u, psi, coef in zip(self.u, self.psi, self.coef):
            e = np.exp(np.outer(x, u - 1) + np.outer(v, psi[k]))
            theta += np.real(e @ coef[k].T)
        return theta


def strategy_table(params: HestonParams, claims: ClaimSet, weights: np.ndarray,
                   times: np.ndarray, cfg: SimConfig) -> StrategyTable:
    """Precompute the (t, u-node) tensors; row o of ``weights`` combines the options into output o."""
    y, wy = u_nodes(cfg.n_u_nodes)
    tau = params.maturity - times[:-1]
    table = StrategyTable(u=[], psi=[], coef=[])
    strips = sorted({c.strip_R for c in claims.supplementary})
    for R in strips:
        members = [i for i, c in enumerate(claims.supplementary) if c.strip_R == R]
        u = R + 1j * y
        ce = char_exponents(tau[:, None], u[None, :], 0.0, params)
        base = 2j * wy * np.exp(ce.phi) * (u + params.rho * params.sigma * ce.psi)
        coef = np.zeros((len(tau), weights.shape[0], len(y)), dtype=complex)
        for i in members:
            ft = laplace_transform(u, claims.supplementary[i].strike)
            coef += weights[:, i][None, :, None] * (base * ft)[:, None, :]
        table.u.append(u)
        table.psi.append(ce.psi)
        table.coef.append(coef)
    return table


class _HedgeLeg:
    """State, quadratic variation and hedge gains along one time grid."""

    def __init__(self, params: HestonParams, table: Optional[StrategyTable], times: np.ndarray,
                 n_paths: int, n_out: int):
        self.params = params
        self.table = table
        self.times = times
        self.n_out = n_out
        self.x = np.full(n_paths, params.x0)
        self.v = np.full(n_paths, params.v0)
        self.qv = np.zeros(n_paths)
        self.gains0 = np.zeros(n_paths)
        self.gains = np.zeros((n_paths, n_out))

    def step(self, k: int, z1: np.ndarray, z2: np.ndarray):
        dt = self.times[k + 1] - self.times[k]
        s = np.exp(self.x)
        theta0 = strategy_theta0(self.times[k], s, self.v, self.params)
        theta = self.table.positions(k, self.x, self.v, self.n_out) if self.table is not None else None
        self.qv += np.maximum(self.v, 0.0) * dt
        self.x, self.v = _euler_step(self.x, self.v, dt, z1, z2, self.params)
        ds = np.exp(self.x) - s
        self.gains0 += theta0 * ds
        if theta is not None:
            self.gains += theta * ds[:, None]

    def residuals(self, claims: ClaimSet, weights: np.ndarray, prices: np.ndarray):
        L0 = self.qv - swap_rate(self.params) - self.gains0
        s_T = np.exp(self.x)
        if claims.n:
            payoffs = np.column_stack([payoff(c, s_T) for c in claims.supplementary])
        else:
            payoffs = np.zeros((len(s_T), 0))
        return L0, payoffs @ weights.T - prices @ weights.T - self.gains


def _residual_batch(params: HestonParams, claims: ClaimSet, weights: np.ndarray, prices: np.ndarray,
                    tables: Tuple[Optional[StrategyTable], Optional[StrategyTable]], cfg: SimConfig,
                    seed_seq: np.random.SeedSequence, n_paths: int):
    """Residuals on the fine grid and, with ``cfg.richardson``, on every second node.

    The half-resolution path is driven by (z_{2m} + z_{2m+1}) / sqrt(2), so
    both levels see the same Brownian path.
    """
    times = time_grid(params, cfg, even=cfg.richardson)
    rng = np.random.Generator(np.random.Philox(seed_seq))
    n_out = weights.shape[0]
    fine = _HedgeLeg(params, tables[0], times, n_paths, n_out)
    coarse = _HedgeLeg(params, tables[1], times[::2], n_paths, n_out) if cfg.richardson else None

    z_even = None
    for k in range(len(times) - 1):
        z = rng.standard_normal((2, n_paths))
        fine.step(k, z[0], z[1])
        if coarse is None:
            continue
        if k % 2 == 0:
            z_even = z
        else:
            zc = (z_even + z) / math.sqrt(2.0)
            coarse.step(k // 2, zc[0], zc[1])

    L0, L = fine.residuals(claims, weights, prices)
    if coarse is None:
        return L0, L, fine.gains0, None, None
    L0_coarse, L_coarse = coarse.residuals(claims, weights, prices)
    return L0, L, fine.gains0, L0_coarse, L_coarse


def jackknife(data: np.ndarray, stat, groups: int) -> Tuple[np.ndarray, np.ndarray]:
    """Statistic on the full sample and its delete-a-group jackknife standard error."""
    full = np.asarray(stat(data))
    blocks = np.array_split(np.arange(len(data)), groups)
    loo = np.array([stat(np.delete(data, b, axis=0)) for b in blocks])
    se = np.sqrt((groups - 1) / groups * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return full, se


def _simulate_residuals(params: HestonParams, claims: ClaimSet, weights: np.ndarray,
                        cfg: SimConfig, workers: int = 1) -> list:
    """[L0, L, gains0, L0_coarse, L_coarse] over all batches; the coarse pair is None without Richardson."""
    times = time_grid(params, cfg, even=cfg.richardson)
    prices = np.array([option_price(params, c) for c in claims.supplementary])
    tables = (None, None)
    if claims.n:
        tables = (strategy_table(params, claims, weights, times, cfg),
                  strategy_table(params, claims, weights, times[::2], cfg) if cfg.richardson else None)
    tasks = [(params, claims, weights, prices, tables, cfg, ss, size) for ss, size in _rng_streams(cfg)]
    logger.info("simulating %d paths x %d steps in %d batches%s", cfg.n_paths, len(times) - 1, len(tasks),
                " with Richardson extrapolation" if cfg.richardson else "")
    parts = run_tasks(_residual_batch, tasks, workers)

    out = []
    for name, k in (("L0", 0), ("L", 1), ("gains0", 2), ("L0_coarse", 3), ("L_coarse", 4)):
        if parts[0][k] is None:
            out.append(None)
            continue
        arr = np.concatenate([p[k] for p in parts])
        if not np.all(np.isfinite(arr)):
            raise NonFiniteResult(f"{np.count_nonzero(~np.isfinite(arr))} simulated values of {name} are not finite")
        out.append(arr)
    return out


def _extrapolated(stat: Callable, width: int) -> Callable:
    # columns [:width] are the fine level, [width:] the half-resolution level
    return lambda d: 2 * stat(d[:, :width]) - stat(d[:, width:])


def _mean(d):
    return d.mean(axis=0)


def _cov(d):
    return np.atleast_2d(np.cov(d, rowvar=False))


def estimate_moments(params: HestonParams, claims: ClaimSet, cfg: SimConfig, workers: int = 1) -> ResidualSample:
    """Mean and covariance of (L0, L^1..L^n) with jackknife errors.

    With ``cfg.richardson`` each statistic is 2 stat(fine) - stat(coarse),
    which removes the O(dt) bias of the left-point hedge.
    """
    claims = prepare_claim_set(claims, params)
    L0, L, gains0, L0_coarse, L_coarse = _simulate_residuals(params, claims, np.eye(claims.n), cfg, workers)
    data = np.column_stack([L0, L])
    mean_stat, cov_stat = _mean, _cov
    if L0_coarse is not None:
        data = np.column_stack([data, L0_coarse, L_coarse])
        mean_stat, cov_stat = _extrapolated(_mean, claims.n + 1), _extrapolated(_cov, claims.n + 1)
    mean, mean_se = jackknife(data, mean_stat, cfg.jackknife_groups)
    cov, cov_se = jackknife(data, cov_stat, cfg.jackknife_groups)
    return ResidualSample(L0=L0, L=L, gains0=gains0, mean=mean, mean_se=mean_se, cov=cov, cov_se=cov_se,
                          L0_coarse=L0_coarse, L_coarse=L_coarse)


def realized_error(v, params: HestonParams, claims: ClaimSet, cfg: SimConfig,
                   workers: int = 1) -> Tuple[float, float]:
    """Mean squared terminal shortfall of the semi-static hedge with static weights v, and its standard error.

    With ``cfg.richardson`` the per-path value is 2 f^2 - c^2 for the fine and
    half-resolution shortfalls f and c.
    """
    claims = prepare_claim_set(claims, params)
    v = np.asarray(v, dtype=float).reshape(1, -1)
    L0, Lv, _, L0_coarse, Lv_coarse = _simulate_residuals(params, claims, v, cfg, workers)
    shortfall2 = (L0 - Lv[:, 0]) ** 2
    if L0_coarse is not None:
        shortfall2 = 2 * shortfall2 - (L0_coarse - Lv_coarse[:, 0]) ** 2
    return float(shortfall2.mean()), float(shortfall2.std(ddof=1) / math.sqrt(len(shortfall2)))


def z_scores(analytic, estimate, se) -> np.ndarray:
    analytic, estimate, se = (np.asarray(a, dtype=float) for a in (analytic, estimate, se))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (estimate - analytic) / se
    # zero standard error with exact agreement counts as agreement
    return np.where((se == 0) & (estimate == analytic), 0.0, z)


def compare_with_analytic(m: MomentData, sample: ResidualSample) -> List[Dict[str, Any]]:
    """One record per entry of A, B and the upper triangle of C with its z-score."""
    labels = m.labels or [str(i) for i in range(m.n)]
    names = ["A"]
    analytic = [m.A]
    estimate = [sample.A_hat]
    se = [sample.cov_se[0, 0]]
    for i, label in enumerate(labels):
        names.append(f"B[{label}]")
        analytic.append(m.B[i])
        estimate.append(sample.B_hat[i])
        se.append(sample.cov_se[i + 1, 0])
    for i in range(m.n):
        for j in range(i, m.n):
            names.append(f"C[{labels[i]},{labels[j]}]")
            analytic.append(m.C[i, j])
            estimate.append(sample.C_hat[i, j])
            se.append(sample.cov_se[i + 1, j + 1])
    z = z_scores(analytic, estimate, se)
    return [{"entry": name, "analytic": float(a), "mc": float(e), "se": float(s), "z": float(zz)}
            for name, a, e, s, zz in zip(names, analytic, estimate, se, z)]
