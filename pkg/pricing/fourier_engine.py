"""
Fourier engine: the variance A of the variance-swap residual, its
covariances B with the option residuals and the option residual
covariance matrix C.

Every option enters through the strip integral over Re u = R of its
payoff transform. The time integrals use a fixed Gauss-Legendre rule and
the strip integrals scipy's adaptive quad_vec; the outer integral of a C
entry uses bisected Clenshaw-Curtis panels so that a whole panel of outer
nodes shares one inner quad_vec call.
"""
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad_vec

from database.moment_cache import MomentCache, digest
from models.data_models import ClaimSet, ClaimSpec, HestonParams, MomentData
from models.errors import InvalidParameters, QuadratureFailure
from pricing.claims import choose_strip, laplace_transform, prepare_claim_set
from pricing.heston_model import (char_exponents, check_moment_condition, hhv_components,
                                  hv_components, swap_rate)

logger = logging.getLogger(__name__)

IMAG_TOL = 1e-9
PSD_TOL_C = 1e-10
PSD_TOL_EXTENDED = 1e-8


@dataclass(frozen=True)
class QuadratureSettings:
    """Integration settings; everything except ``workers`` enters the cache key."""
    time_nodes: int = 64
    strip_tol: float = 1e-10
    entry_tol: float = 1e-8
    y_start: float = 16.0
    y_max: float = 1e4
    limit: int = 2000
    workers: int = 1

    def __post_init__(self):
        if self.time_nodes < 2:
            raise InvalidParameters(f"time_nodes must be at least 2, got {self.time_nodes}")
        if not (self.strip_tol > 0 and self.entry_tol > 0):
            raise InvalidParameters("quadrature tolerances must be positive")
        if not 0 < self.y_start < self.y_max:
            raise InvalidParameters("need 0 < y_start < y_max")

    def key_fields(self) -> Dict[str, Any]:
        d = asdict(self)
        d.pop("workers")
        return d


@dataclass
class StripResult:
    value: Any
    abs_err: float
    n_eval: int
    imag: float = 0.0


def time_rule(maturity: float, n_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes (ascending) and weights on [0, maturity]."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    return 0.5 * maturity * (x + 1), 0.5 * maturity * w


def clenshaw_curtis(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes (descending from 1) and weights of the (n + 1)-point Clenshaw-Curtis rule on [-1, 1], n even.

    Every second node of the n-rule is a node of the n/2-rule.
    """
    theta = np.pi * np.arange(n + 1) / n
    inner = theta[1:-1]
    v = np.ones(n - 1)
    for k in range(1, n // 2):
        v -= 2 * np.cos(2 * k * inner) / (4 * k * k - 1)
    v -= np.cos(n * inner) / (n * n - 1)
    w = np.empty(n + 1)
    w[0] = w[n] = 1.0 / (n * n - 1)
    w[1:-1] = 2 * v / n
    return np.cos(theta), w


def _stacked(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    return np.stack([z.real, z.imag])


def _check_real(value, imag, abs_err: float, tol: float):
    limit = IMAG_TOL * np.abs(value) + 10 * (abs_err + tol)
    if np.any(np.asarray(imag) > limit):
        raise QuadratureFailure(
            f"strip integral has imaginary part {float(np.max(imag)):.3e}; the integrand is not conjugate-symmetric")


def integrate_strip(f: Callable, R, tol: float = 1e-10, real: bool = True,
                    y_start: float = 16.0, y_max: float = 1e4, limit: int = 2000) -> StripResult:
    """Integral of f(u) du along u = R + iy, y over the real line.

    ``R`` may be an array; f then receives an array of the same shape and
    the integral is taken elementwise. The halves y > 0 and y < 0 are folded
    onto y >= 0. With ``real`` the integral is known to be real: its
    imaginary part is measured, checked against the error estimate, kept in
    ``imag`` and dropped. The range [0, Y] is extended by doubling Y until
    the tail bound |g(Y)| Y drops below ``tol``.
    """
    R = np.asarray(R, dtype=float)

    def g(y):
        return _stacked(1j * (np.asarray(f(R + 1j * y)) + np.asarray(f(R - 1j * y))))

    value = 0.0
    abs_err = 0.0
    n_eval = 0
    a, b = 0.0, y_start
    k = 0
    while True:
        seg_tol = tol * 0.5 ** (k + 1)
        res, err, info = quad_vec(g, a, b, epsabs=seg_tol, epsrel=0.0, limit=limit,
                                  norm="max", full_output=True)
        n_eval += info.neval
        if info.status != 0:
            raise QuadratureFailure(
                f"adaptive strip quadrature on [{a:g}, {b:g}] stopped: {info.message}")
        value = value + res
        abs_err += float(err)

        tail = float(np.max(np.abs(g(b)))) * b
        n_eval += 1
        if tail < tol:
            break
        if b >= y_max:
            raise QuadratureFailure(f"integrand still of size {tail:.3e} at y={b:g}; budget y_max exhausted")
        a, b = b, 2 * b
        k += 1

    if not real:
        return StripResult(value=value[0] + 1j * value[1], abs_err=abs_err, n_eval=n_eval)
    imag = np.abs(value[1])
    _check_real(value[0], imag, abs_err, tol)
    return StripResult(value=value[0], abs_err=abs_err, n_eval=n_eval, imag=float(np.max(imag)))


PANEL_RULE = clenshaw_curtis(32)
COARSE_WEIGHTS = clenshaw_curtis(16)[1]


def integrate_panels(G: Callable, tol: float, y_start: float = 16.0, y_max: float = 1e4,
                     max_depth: int = 12) -> StripResult:
    """Integral over y >= 0 of an integrand evaluated a whole panel at a time.

    G(y) takes an array of y and returns (complex values, error bound of
    those values, evaluations spent). The real part is the integral wanted;
    the imaginary part must vanish and its size is reported in ``imag``.
    [0, Y] is cut into [0, 1], [1, 2], [2, 4], ...; a panel is bisected until
    the nested 33- and 17-point Clenshaw-Curtis sums agree within its share of
    ``tol``. Y grows until it passes y_start and |G(Y)| Y drops below ``tol``.
    """
    x, w = PANEL_RULE
    total = 0j
    abs_err = 0.0
    value_err = 0.0
    n_eval = 0
    a, b, k = 0.0, 1.0, 0
    while True:
        stack = [(a, b, tol * 0.5 ** (k + 1), 0)]
        edge = None
        while stack:
            lo, hi, panel_tol, depth = stack.pop()
            half = 0.5 * (hi - lo)
            vals, err_bound, spent = G(lo + half * (1 + x))
            n_eval += spent
            value_err = max(value_err, float(err_bound))
            if edge is None:
                # x[0] = 1 is the right end b of the segment
                edge = abs(vals[0])
            fine = half * np.dot(w, vals)
            err = abs(fine - half * np.dot(COARSE_WEIGHTS, vals[::2]))
            if err <= panel_tol:
                total += fine
                abs_err += err
            elif depth >= max_depth:
                raise QuadratureFailure(f"panel [{lo:g}, {hi:g}] did not converge (error {err:.1e})")
            else:
                mid = lo + half
                stack.append((mid, hi, 0.5 * panel_tol, depth + 1))
                stack.append((lo, mid, 0.5 * panel_tol, depth + 1))

        tail = float(edge) * b
        if b >= y_start and tail < tol:
            break
        if b >= y_max:
            raise QuadratureFailure(f"integrand still of size {tail:.3e} at y={b:g}; budget y_max exhausted")
        a, b, k = b, 2 * b, k + 1

    abs_err += value_err * b
    _check_real(total.real, abs(total.imag), abs_err, tol)
    return StripResult(value=float(total.real), abs_err=abs_err, n_eval=n_eval, imag=abs(total.imag))


def _strip_kwargs(settings: QuadratureSettings) -> Dict[str, Any]:
    return {"y_start": settings.y_start, "y_max": settings.y_max, "limit": settings.limit}


def compute_A(params: HestonParams) -> float:
    """sigma^2 (1 - rho^2) / lam^2 * int_0^T (1 - e^{-lam (T - t)})^2 E[V_t] dt in closed form."""
    lam, T = params.lam, params.maturity
    e1 = math.exp(-lam * T)
    e2 = math.exp(-2 * lam * T)
    stationary = T - 2 * (1 - e1) / lam + (1 - e2) / (2 * lam)
    transient = (1 - e2) / lam - 2 * T * e1
    lead = params.sigma ** 2 * (1 - params.rho ** 2) / lam ** 2
    return lead * (params.kappa * stationary + (params.v0 - params.kappa) * transient)


def option_price(params: HestonParams, claim: ClaimSpec, t: float = 0.0,
                 x: Optional[float] = None, v: Optional[float] = None, tol: float = 1e-10) -> float:
    """Fourier price of a put or call given X_t = x and V_t = v (defaults: the time-0 state).

    The variance swap is priced at inception as k* - k.
    """
    if not claim.is_option:
        k = claim.swap_k if claim.swap_k is not None else swap_rate(params)
        return swap_rate(params) - k
    x = params.x0 if x is None else x
    v = params.v0 if v is None else v
    tau = params.maturity - t
    R = claim.strip_R if claim.strip_R is not None else choose_strip(claim, params)
    check_moment_condition(R, tau, params)

    def integrand(u):
        ce = char_exponents(tau, u, 0.0, params)
        return np.exp(u * x + ce.phi + v * ce.psi) * laplace_transform(u, claim.strike)

    return float(integrate_strip(integrand, R, tol=tol).value)


def compute_B_entry(params: HestonParams, claim: ClaimSpec, settings: QuadratureSettings) -> StripResult:
    t, wt = time_rule(params.maturity, settings.time_nodes)
    lead = params.sigma ** 2 * (1 - params.rho ** 2) / params.lam
    weight = wt * (1 - np.exp(-params.lam * (params.maturity - t)))

    def integrand(u):
        psi_tail, hv = hv_components(t, u, params, check=False, monitor=True)
        return lead * np.dot(weight, psi_tail * hv) * laplace_transform(u, claim.strike)

    return integrate_strip(integrand, claim.strip_R, tol=settings.strip_tol, real=True,
                           **_strip_kwargs(settings))


def compute_C_entry(params: HestonParams, claim_i: ClaimSpec, claim_j: ClaimSpec,
                    settings: QuadratureSettings) -> StripResult:
    """C_ij as an outer panel integral over u1 of an inner strip integral over u2.

    All nodes of an outer panel, mirrored ones included, go through one
    inner quad_vec call whose max-norm tolerance bounds each node separately.
    """
    t, wt = time_rule(params.maturity, settings.time_nodes)
    t_col, w_col = t[:, None], wt[:, None]
    lead = params.sigma ** 2 * (1 - params.rho ** 2)
    R_i = claim_i.strip_R

    def outer(y1):
        m = len(y1)
        u1 = np.concatenate([R_i + 1j * y1, R_i - 1j * y1])
        ft_i = laplace_transform(u1, claim_i.strike)
        u1_row = u1[None, :]

        def inner(u2):
            p1, p2, hhv = hhv_components(t_col, u1_row, u2, params, check=False, monitor=True)
            return lead * ft_i * np.sum(w_col * p1 * p2 * hhv, axis=0) * laplace_transform(u2, claim_j.strike)

        res = integrate_strip(inner, claim_j.strip_R, tol=settings.strip_tol, real=False,
                              **_strip_kwargs(settings))
        return 1j * (res.value[:m] + res.value[m:]), res.abs_err, res.n_eval

    return integrate_panels(outer, settings.entry_tol, y_start=settings.y_start, y_max=settings.y_max)


def run_tasks(fn: Callable, tasks: List[tuple], workers: int) -> list:
    # results come back in task order, whatever the completion order
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *task) for task in tasks]
        return [f.result() for f in futures]


def _entry_key(kind: str, params: HestonParams, claims: Sequence[ClaimSpec],
               settings: QuadratureSettings) -> str:
    items = sorted((c.to_dict() for c in claims), key=lambda d: json.dumps(d, sort_keys=True))
    return digest({"kind": kind, "params": params.to_dict(), "claims": items,
                   "quadrature": settings.key_fields()})


def compute_B(params: HestonParams, claims: ClaimSet, settings: Optional[QuadratureSettings] = None,
              cache: Optional[MomentCache] = None, meta: Optional[Dict[str, Any]] = None) -> np.ndarray:
    settings = settings or QuadratureSettings()
    claims = prepare_claim_set(claims, params)
    n = claims.n
    B = np.zeros(n)
    errs = np.zeros(n)
    evals = np.zeros(n, dtype=int)

    todo = []
    for i, c in enumerate(claims.supplementary):
        hit = cache.get(_entry_key("B", params, [c], settings)) if cache else None
        if hit is None:
            todo.append(i)
        else:
            B[i], errs[i], evals[i] = hit
    if cache and len(todo) < n:
        logger.info("B: %d of %d entries from cache", n - len(todo), n)

    tasks = [(params, claims.supplementary[i], settings) for i in todo]
    for i, res in zip(todo, run_tasks(compute_B_entry, tasks, settings.workers)):
        B[i], errs[i], evals[i] = res.value, res.abs_err, res.n_eval
        logger.info("B[%s] = %.10g (err %.1e, %d evals)", claims.supplementary[i].label, B[i], errs[i], evals[i])
        if cache:
            cache.put(_entry_key("B", params, [claims.supplementary[i]], settings), B[i], errs[i], evals[i])

    if meta is not None:
        meta["B_abs_err"] = errs.tolist()
        meta["B_n_eval"] = evals.tolist()
    return B


def compute_C(params: HestonParams, claims: ClaimSet, settings: Optional[QuadratureSettings] = None,
              cache: Optional[MomentCache] = None, meta: Optional[Dict[str, Any]] = None) -> np.ndarray:
    settings = settings or QuadratureSettings()
    claims = prepare_claim_set(claims, params)
    n = claims.n
    opts = claims.supplementary
    C = np.zeros((n, n))
    errs = np.zeros((n, n))
    evals = np.zeros((n, n), dtype=int)

    pairs: List[Tuple[int, int]] = []
    for i in range(n):
        for j in range(i, n):
            hit = cache.get(_entry_key("C", params, [opts[i], opts[j]], settings)) if cache else None
            if hit is None:
                pairs.append((i, j))
            else:
                C[i, j], errs[i, j], evals[i, j] = hit
    total = n * (n + 1) // 2
    if cache and len(pairs) < total:
        logger.info("C: %d of %d entries from cache", total - len(pairs), total)

    tasks = [(params, opts[i], opts[j], settings) for i, j in pairs]
    for (i, j), res in zip(pairs, run_tasks(compute_C_entry, tasks, settings.workers)):
        C[i, j], errs[i, j], evals[i, j] = res.value, res.abs_err, res.n_eval
        logger.info("C[%s, %s] = %.10g (err %.1e, %d evals)", opts[i].label, opts[j].label,
                    res.value, res.abs_err, res.n_eval)
        if cache:
            cache.put(_entry_key("C", params, [opts[i], opts[j]], settings), res.value, res.abs_err, res.n_eval)

    upper = np.triu_indices(n, 1)
    C[(upper[1], upper[0])] = C[upper]
    errs[(upper[1], upper[0])] = errs[upper]
    evals[(upper[1], upper[0])] = evals[upper]

    if abs(params.rho) < 1 and n and np.any(np.diag(C) <= 0):
        bad = [opts[i].label for i in np.flatnonzero(np.diag(C) <= 0)]
        raise QuadratureFailure(f"non-positive residual variance for {', '.join(bad)}")

    min_eig = float(np.linalg.eigvalsh(C).min()) if n else 0.0
    if min_eig < -PSD_TOL_C * np.trace(C):
        logger.warning("C has eigenvalue %.3e below the PSD tolerance", min_eig)

    if meta is not None:
        meta["C_abs_err"] = errs.tolist()
        meta["C_n_eval"] = evals.tolist()
        meta["min_eig_C"] = min_eig
    return C


def reciprocal_condition(C: np.ndarray) -> float:
    """1-norm reciprocal condition number; 0 for a singular matrix."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.size == 0:
        return 1.0
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(C, 1)
    if not np.isfinite(cond) or cond == 0:
        return 0.0
    return float(1.0 / cond)


def extended_covariance(m: MomentData) -> Tuple[np.ndarray, float]:
    """[[A, B^T], [B, C]] and its smallest eigenvalue."""
    n = m.n
    E = np.empty((n + 1, n + 1))
    E[0, 0] = m.A
    E[0, 1:] = m.B
    E[1:, 0] = m.B
    E[1:, 1:] = m.C
    return E, float(np.linalg.eigvalsh(E).min())


def params_hash(params: HestonParams, claims: ClaimSet, settings: QuadratureSettings) -> str:
    return digest({"params": params.to_dict(), "target": claims.target.to_dict(),
                   "options": [c.to_dict() for c in claims.supplementary],
                   "quadrature": settings.key_fields()})


def compute_moments(params: HestonParams, claims: ClaimSet, settings: Optional[QuadratureSettings] = None,
                    cache: Optional[MomentCache] = None) -> MomentData:
    """Assemble A, B and C for a claim set, reusing cached entries."""
    settings = settings or QuadratureSettings()
    claims = prepare_claim_set(claims, params)

    meta: Dict[str, Any] = {
        "time_nodes": settings.time_nodes,
        "strip_tol": settings.strip_tol,
        "entry_tol": settings.entry_tol,
        "strips": [c.strip_R for c in claims.supplementary],
    }
    A = compute_A(params)
    B = compute_B(params, claims, settings, cache, meta)
    C = compute_C(params, claims, settings, cache, meta)

    m = MomentData(A=A, B=B, C=C, k_star=swap_rate(params), swap_k=claims.target.swap_k,
                   labels=claims.labels, strikes=claims.strikes, quad_meta=meta,
                   params_hash=params_hash(params, claims, settings))

    _, min_eig = extended_covariance(m)
    meta["min_eig_extended"] = min_eig
    meta["rcond_C"] = reciprocal_condition(C)
    trace = A + float(np.trace(C))
    if min_eig < -PSD_TOL_EXTENDED * trace:
        logger.warning("extended covariance matrix has eigenvalue %.3e below the PSD tolerance", min_eig)
    logger.info("moments ready: A=%.6g, n=%d, rcond(C)=%.3e", A, m.n, meta["rcond_C"])
    return m
