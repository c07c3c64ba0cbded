"""
Outer quadratic problem min_v A - 2 v^T B + v^T C v: unconstrained,
rank-deficient, linearly constrained, and the relative hedge contribution
of one additional asset.
"""
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from models.data_models import HedgeSolution, MomentData
from models.errors import MaxIterations, RedundantAsset
from pricing.fourier_engine import reciprocal_condition

logger = logging.getLogger(__name__)

RCOND_MIN = 1e-14
PINV_CUTOFF = 1e-12
KKT_TOL = 1e-8
NEG_EPS2_TOL = 1e-10
REDUNDANT_TOL = 1e-12
JITTER = 1e-12


def initial_capital(m: MomentData) -> float:
    """c = E[H^0_T] = k* - k."""
    return m.k_star - m.swap_k


def hedging_error(v, m: MomentData) -> float:
    v = np.asarray(v, dtype=float)
    eps2 = float(m.A - 2 * v @ m.B + v @ m.C @ v)
    if eps2 < 0:
        if eps2 < -NEG_EPS2_TOL * max(m.A, np.finfo(float).tiny):
            logger.warning("squared hedging error %.3e is negative beyond tolerance; floored at 0", eps2)
        eps2 = 0.0
    return eps2


def _solution(v, m: MomentData, method: str, active_set=None,
              kkt_residual: Optional[float] = None) -> HedgeSolution:
    eps2 = hedging_error(v, m)
    return HedgeSolution(v=np.asarray(v, dtype=float), c=initial_capital(m), eps2=eps2,
                         rel_err=math.sqrt(eps2) / m.k_star, active_set=list(active_set or []),
                         method=method, kkt_residual=kkt_residual)


def pinv_solve(C: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Minimum-norm solution of C x = rhs, eigenvalues below 1e-12 * max dropped."""
    w, Q = np.linalg.eigh(C)
    cutoff = PINV_CUTOFF * max(float(w.max()), 0.0) if w.size else 0.0
    keep = w > cutoff
    if not np.any(keep):
        return np.zeros_like(np.asarray(rhs, dtype=float))
    Qk = Q[:, keep]
    coef = Qk.T @ rhs
    if coef.ndim == 1:
        return Qk @ (coef / w[keep])
    return Qk @ (coef / w[keep][:, None])


def symmetric_solve(C: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve, or the pseudo-inverse when C is numerically singular."""
    if C.shape[0] == 0:
        return np.zeros_like(np.asarray(rhs, dtype=float))
    if reciprocal_condition(C) > RCOND_MIN:
        try:
            return cho_solve(cho_factor(C), rhs)
        except LinAlgError:
            pass
    return pinv_solve(C, rhs)


def solve_unconstrained(m: MomentData) -> HedgeSolution:
    if m.n == 0:
        return _solution(np.zeros(0), m, "unconstrained")
    rcond = reciprocal_condition(m.C)
    if rcond <= RCOND_MIN:
        logger.warning("C is numerically singular (rcond %.2e); using the pseudo-inverse", rcond)
        return solve_pinv(m)
    try:
        factor = cho_factor(m.C)
    except LinAlgError:
        logger.warning("Cholesky factorisation of C failed; using the pseudo-inverse")
        return solve_pinv(m)
    return _solution(cho_solve(factor, m.B), m, "cholesky")


def solve_pinv(m: MomentData) -> HedgeSolution:
    if m.n == 0:
        return _solution(np.zeros(0), m, "pinv")
    return _solution(pinv_solve(m.C, m.B), m, "pinv")


def nonneg_constraints(n: int) -> np.ndarray:
    return np.eye(n)


def _as_constraint_matrix(constraints, n: int) -> np.ndarray:
    P = np.atleast_2d(np.asarray(constraints, dtype=float))
    if P.size == 0:
        return np.zeros((0, n))
    if P.shape[1] != n:
        raise ValueError(f"constraint vectors have length {P.shape[1]}, expected {n}")
    return P


def _equality_qp(C: np.ndarray, B: np.ndarray, P_w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # stationarity 2 C x - 2 B - P_w^T mu = 0, P_w x = 0
    n, k = C.shape[0], P_w.shape[0]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = 2 * C
    kkt[:n, n:] = -P_w.T
    kkt[n:, :n] = P_w
    rhs = np.concatenate([2 * B, np.zeros(k)])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _snap_bounds(v: np.ndarray, P: np.ndarray, working: list) -> np.ndarray:
    # an active bound row e_i pins v_i to exactly zero
    for i in working:
        nz = np.flatnonzero(P[i])
        if len(nz) == 1 and P[i, nz[0]] > 0:
            v[nz[0]] = 0.0
    return v


def _active_set(C: np.ndarray, B: np.ndarray, P: np.ndarray, max_iter: int) -> Tuple[np.ndarray, list]:
    """Primal active-set method for min v^T C v - 2 v^T B s.t. P v >= 0, started at v = 0."""
    n = C.shape[0]
    v = np.zeros(n)
    working: list = []
    scale = 1 + float(np.max(np.abs(B))) if B.size else 1.0

    for _ in range(max_iter):
        x, mu = _equality_qp(C, B, P[working])
        step = x - v
        if np.max(np.abs(step), initial=0.0) <= 1e-14 * (1 + np.max(np.abs(v), initial=0.0)):
            if len(mu) == 0 or mu.min() >= -KKT_TOL * scale:
                return v, sorted(working)
            working.pop(int(np.argmin(mu)))
            continue

        alpha, blocking = 1.0, None
        slope = P @ step
        for i in range(P.shape[0]):
            if i in working or slope[i] >= 0:
                continue
            ratio = -(P[i] @ v) / slope[i]
            if ratio < alpha:
                alpha, blocking = max(ratio, 0.0), i
        v = v + alpha * step
        if blocking is not None:
            working.append(blocking)
        v = _snap_bounds(v, P, working)

    raise MaxIterations(f"active-set method did not terminate in {max_iter} iterations")


def kkt_residual(v, m: MomentData, constraints, active_set: Sequence[int]) -> float:
    """Largest violation of stationarity, feasibility, dual sign and complementarity, scaled by 1 + max|B|."""
    v = np.asarray(v, dtype=float)
    P = _as_constraint_matrix(constraints, m.n)
    grad = 2 * (m.C @ v - m.B)
    P_a = P[list(active_set)]
    if len(active_set):
        mu = np.linalg.lstsq(P_a.T, grad, rcond=None)[0]
    else:
        mu = np.zeros(0)
    parts = [
        np.max(np.abs(grad - P_a.T @ mu), initial=0.0),
        np.max(-mu, initial=0.0),
        np.max(-(P @ v), initial=0.0),
        np.max(np.abs(mu * (P_a @ v)), initial=0.0),
    ]
    scale = 1 + float(np.max(np.abs(m.B), initial=0.0))
    return float(max(parts)) / scale


def solve_constrained(m: MomentData, constraints, max_iter: Optional[int] = None) -> HedgeSolution:
    """Minimise the hedging error subject to p^T v >= 0 for every constraint row p.

    On cycling the problem is retried once with C jittered by 1e-12 * trace(C) / n.
    """
    n = m.n
    P = _as_constraint_matrix(constraints, n)
    if n == 0:
        return _solution(np.zeros(0), m, "active_set")
    max_iter = max_iter or 50 * (n + P.shape[0])

    try:
        v, active = _active_set(m.C, m.B, P, max_iter)
    except MaxIterations:
        jitter = JITTER * float(np.trace(m.C)) / n
        logger.warning("active set cycled; retrying with jitter %.2e", jitter)
        v, active = _active_set(m.C + jitter * np.eye(n), m.B, P, max_iter)

    residual = kkt_residual(v, m, P, active)
    if residual > KKT_TOL:
        logger.warning("constrained solution has KKT residual %.2e", residual)
    return _solution(v, m, "active_set", active_set=active, kkt_residual=residual)


def relative_hedge_contribution(m: MomentData, newcol: Tuple[np.ndarray, float, float]) -> float:
    """Fractional error reduction from adding one asset to the n assets of ``m``.

    ``newcol`` is (Cov[L^{n+1}, L^i] for the existing assets, Cov[L^{n+1}, L^0], Var[L^{n+1}]).
    """
    K, cov0, var = newcol
    K = np.asarray(K, dtype=float)
    if m.n == 0:
        schur, num, eps2 = var, cov0, m.A
    else:
        x = symmetric_solve(m.C, np.column_stack([K, m.B]))
        schur = var - K @ x[:, 0]
        num = cov0 - K @ x[:, 1]
        eps2 = m.A - m.B @ x[:, 1]

    if schur <= REDUNDANT_TOL * max(var, np.finfo(float).tiny):
        raise RedundantAsset(f"Schur complement {schur:.3e} of the new asset is below tolerance")
    if eps2 <= 0:
        return 0.0
    return float(min(max(num * num / (schur * eps2), 0.0), 1.0))
