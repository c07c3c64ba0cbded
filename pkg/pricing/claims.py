"""
Instrument definitions: payoff transforms, integration strips and the
Neuberger replication baseline
"""
import logging
import math
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from models.data_models import ClaimKind, ClaimSet, ClaimSpec, HestonParams
from models.errors import InvalidParameters, NoValidStrip, PoleError
from pricing.heston_model import check_moment_condition, critical_time, swap_rate

logger = logging.getLogger(__name__)

DEFAULT_PUT_R = -1.0
DEFAULT_CALL_R = 2.0
STRIP_MARGIN = 0.05
POLE_TOL = 1e-14
_U_SEARCH_MAX = 1e4
_T_STAR_CAP = 1e6


def laplace_transform(u, strike: float):
    """Two-sided Laplace transform K^(1-u) / (2 pi i u (u - 1)) of a put or call payoff."""
    u = np.asarray(u, dtype=complex)
    if np.any(np.abs(u) < POLE_TOL) or np.any(np.abs(u - 1) < POLE_TOL):
        raise PoleError("the payoff transform has poles at u = 0 and u = 1")
    log_k = np.log(np.asarray(strike, dtype=float))
    return np.exp((1 - u) * log_k) / (2j * math.pi * u * (u - 1))


def payoff(claim: ClaimSpec, s):
    s = np.asarray(s, dtype=float)
    if claim.kind == ClaimKind.CALL:
        return np.maximum(s - claim.strike, 0.0)
    if claim.kind == ClaimKind.PUT:
        return np.maximum(claim.strike - s, 0.0)
    raise InvalidParameters("payoff() is defined for puts and calls only")


def explosion_bound(params: HestonParams) -> float:
    """The u > 1 with T*(u) = T, or inf if moments of every order stay finite."""
    T = params.maturity

    def gap(u):
        return min(critical_time(u, params), _T_STAR_CAP) - T

    lo, hi = 1.0, 2.0
    while gap(hi) > 0:
        lo, hi = hi, 2 * hi
        if hi > _U_SEARCH_MAX:
            return math.inf
    if gap(lo) <= 0:
        return lo
    return brentq(gap, lo, hi, xtol=1e-12)


def choose_strip(claim: ClaimSpec, params: HestonParams) -> float:
    T = params.maturity
    if claim.kind == ClaimKind.PUT:
        R = DEFAULT_PUT_R
        for _ in range(10):
            if T < critical_time(2 * R, params):
                return R
            R /= 2
        raise NoValidStrip(f"no put strip R < 0 with finite moments up to T={T}")
    if claim.kind == ClaimKind.CALL:
        u_max = explosion_bound(params)
        if math.isinf(u_max):
            R = DEFAULT_CALL_R
        else:
            R = min(DEFAULT_CALL_R, u_max / 2 - STRIP_MARGIN * u_max)
        if not R > 1 or not T < critical_time(2 * R, params):
            raise NoValidStrip(f"no call strip R > 1 with E[exp(2R X_T)] finite (u_max={u_max:.4g})")
        return R
    raise InvalidParameters("strips are defined for puts and calls only")


def prepare_claim_set(claims: ClaimSet, params: HestonParams) -> ClaimSet:
    """Fill omitted strips and the swap strike, and check every moment condition."""
    target = claims.target
    if target.swap_k is None:
        target = ClaimSpec(ClaimKind.VARIANCE_SWAP, swap_k=swap_rate(params))
    options = []
    for c in claims.supplementary:
        if c.strip_R is None:
            c = c.with_strip(choose_strip(c, params))
        check_moment_condition(2 * c.strip_R, params.maturity, params)
        options.append(c)
    logger.debug("claim strips: %s", ", ".join(f"{c.label}@{c.strip_R:.4g}" for c in options))
    return ClaimSet(target, options)


def neuberger_weights(strikes: Sequence[float], dk: Optional[float] = None) -> np.ndarray:
    """Trapezoidal discretisation 2 dK_i / K_i^2 of the log-contract replication.

    Interior strikes get the centred interval, the two end strikes half of
    their single neighbouring interval. A lone strike needs ``dk``.
    """
    k = np.asarray(strikes, dtype=float)
    if np.any(np.diff(k) <= 0):
        raise InvalidParameters("strikes must be sorted ascending and distinct")
    if len(k) == 1:
        if dk is None:
            raise InvalidParameters("a single strike needs an explicit dk")
        widths = np.array([dk])
    else:
        widths = np.empty_like(k)
        widths[1:-1] = (k[2:] - k[:-2]) / 2
        widths[0] = (k[1] - k[0]) / 2
        widths[-1] = (k[-1] - k[-2]) / 2
    return 2 * widths / k ** 2


def neuberger_portfolio(claims: ClaimSet, spot: float) -> np.ndarray:
    """Neuberger weights on the out-of-the-money members of the claim set, zero elsewhere."""
    otm: List[int] = []
    for i, c in enumerate(claims.supplementary):
        if (c.kind == ClaimKind.PUT and c.strike < spot) or (c.kind == ClaimKind.CALL and c.strike >= spot):
            otm.append(i)
    v = np.zeros(claims.n)
    if not otm:
        return v
    order = sorted(otm, key=lambda i: claims.supplementary[i].strike)
    strikes = [claims.supplementary[i].strike for i in order]
    dk = None if len(strikes) > 1 else 0.05 * spot
    v[order] = neuberger_weights(strikes, dk=dk)
    return v
