"""
Closed-form Heston exponents, moment explosion times and the conditional
expectations E[V_t], E[H_t(u) V_t] and E[H_t(u1) H_t(u2) V_t].

X is the log-price, S = exp(X). The joint moment generating function is
    E[exp(u X_T + w V_T)] = exp(phi_T(u, w) + psi_T(u, w) V_0 + u X_0).
All functions broadcast over numpy arrays.
"""
import logging
import math

import numpy as np

from models.data_models import CharExponents, HestonParams
from models.errors import BranchJump, DomainViolation, NonFiniteResult

logger = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-12
G_POLE_TOL = 1e-14


def chi(u, params: HestonParams):
    return params.rho * params.sigma * u - params.lam


def discriminant(u, params: HestonParams):
    c = chi(u, params)
    return c * c - params.sigma ** 2 * (u * u - u)


def riccati_roots(u, params: HestonParams):
    """Return (r_minus, r_plus) with the principal square root of the discriminant."""
    u = np.asarray(u, dtype=complex)
    c = chi(u, params)
    sq = np.sqrt(c * c - params.sigma ** 2 * (u * u - u))
    s2 = params.sigma ** 2
    return (-c - sq) / s2, (-c + sq) / s2


def g_ratio(u, w, params: HestonParams):
    r_minus, r_plus = riccati_roots(u, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (r_minus - w) / (r_plus - w)


def _log_term(a, b, e):
    # log(1 - g e) - log(1 - g) with g = a / b
    with np.errstate(all="ignore"):
        g = a / b
        return np.log(1 - g * e), np.log(1 - g)


def char_exponents(t, u, w, params: HestonParams, monitor: bool = False) -> CharExponents:
    """phi_t(u, w), psi_t(u, w) and their analytic w-derivatives.

    With ``monitor`` set, axis 0 is taken to be an increasing time axis and the
    principal logarithm in phi is checked for jumps along it.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=complex)
    w = np.asarray(w, dtype=complex)
    t, u, w = np.broadcast_arrays(t, u, w)

    lam, kap, s2 = params.lam, params.kappa, params.sigma ** 2
    coef = 2 * lam * kap / s2

    c = chi(u, params)
    delta = c * c - s2 * (u * u - u)
    sq = np.sqrt(delta)
    r_minus = (-c - sq) / s2
    r_plus = (-c + sq) / s2
    a = r_minus - w
    b = r_plus - w
    e = np.exp(-t * sq)

    degenerate = np.abs(delta) < DEGENERATE_TOL * (1 + np.abs(c) ** 2)
    g_pole = (np.abs(b) < G_POLE_TOL * (1 + np.abs(a))) & ~degenerate

    with np.errstate(all="ignore"):
        d = b - a * e
        # g-form multiplied through by b: a (1 - e) / (1 - g e) = a b (1 - e) / (b - a e)
        psi = w + a * b * (1 - e) / d
        log_num, log_den = _log_term(a, b, e)
        phi = lam * kap * r_minus * t - coef * (log_num - log_den)
        dpsi = e * (b - a) ** 2 / d ** 2
        dphi = coef * (1 - e) / d

        # denominator of g vanishes: w sits on the unstable root r_plus
        psi = np.where(g_pole, w, psi)
        phi = np.where(g_pole, lam * kap * r_plus * t, phi)

        s = 0.5 * s2 * t
        one = 1 + s * a
        psi = np.where(degenerate, w + a * a * s / one, psi)
        phi = np.where(degenerate, lam * kap * r_minus * t - coef * np.log(one), phi)
        dpsi = np.where(degenerate, 1 / one ** 2, dpsi)
        dphi = np.where(degenerate, lam * kap * t / one, dphi)

        # exact initial condition; e (b - a)^2 / d^2 is only 1 up to rounding
        zero = t == 0
        psi = np.where(zero, w, psi)
        phi = np.where(zero, 0.0, phi)
        dpsi = np.where(zero, 1.0, dpsi)
        dphi = np.where(zero, 0.0, dphi)

    for name, arr in (("phi", phi), ("psi", psi), ("dphi_dw", dphi), ("dpsi_dw", dpsi)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteResult(f"{name} is not finite; requested point lies outside the usable domain")

    if monitor and t.ndim > 0 and t.shape[0] > 1:
        im = np.where(degenerate | g_pole, 0.0, np.imag(log_num))
        jumps = np.abs(np.diff(im, axis=0))
        if np.any(jumps > math.pi):
            raise BranchJump(f"log(1 - g exp(-t sqrt(delta))) jumped by {jumps.max():.3f} along t")

    return CharExponents(phi=phi, psi=psi, dphi_dw=dphi, dpsi_dw=dpsi)


def log_continuity_check(t_grid, u, w, params: HestonParams):
    """Raise BranchJump if the principal log in phi is discontinuous along t_grid."""
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    char_exponents(t_grid, u, w, params, monitor=True)


def dw_derivatives_check(t, u, w, params: HestonParams, h: float = 1e-6) -> float:
    """Max relative deviation of the analytic w-derivatives from central differences."""
    ce = char_exponents(t, u, w, params)
    up = char_exponents(t, u, w + h, params)
    dn = char_exponents(t, u, w - h, params)
    fd_phi = (up.phi - dn.phi) / (2 * h)
    fd_psi = (up.psi - dn.psi) / (2 * h)
    dev_phi = np.abs(ce.dphi_dw - fd_phi) / (1 + np.abs(ce.dphi_dw))
    dev_psi = np.abs(ce.dpsi_dw - fd_psi) / (1 + np.abs(ce.dpsi_dw))
    return float(max(np.max(dev_phi), np.max(dev_psi)))


def critical_time(u: float, params: HestonParams) -> float:
    """Moment explosion time T*(u) of E[exp(u X_T)] for real u."""
    u = float(u)
    if 0.0 <= u <= 1.0:
        # S^u with u in [0, 1] is dominated by 1 + S
        return math.inf
    c = float(chi(u, params))
    delta = float(discriminant(u, params))
    if delta >= 0:
        if c < 0:
            return math.inf
        sq = math.sqrt(delta)
        if sq == 0.0:
            return 2.0 / c
        return math.log((c + sq) / (c - sq)) / sq
    sq = math.sqrt(-delta)
    # arctan(sq / c) + pi 1{c < 0}
    return 2.0 * math.atan2(sq, c) / sq


def check_moment_condition(re_u: float, horizon: float, params: HestonParams):
    t_star = critical_time(re_u, params)
    if not horizon < t_star:
        raise DomainViolation(f"E[exp({re_u:g} X_T)] explodes before T={horizon:g} (T*={t_star:.6g})")


def mean_variance(t, params: HestonParams):
    t = np.asarray(t, dtype=float)
    decay = np.exp(-params.lam * t)
    return decay * params.v0 + (1 - decay) * params.kappa


def swap_rate(params: HestonParams) -> float:
    lam, T = params.lam, params.maturity
    return params.kappa * T + (params.v0 - params.kappa) * (1 - math.exp(-lam * T)) / lam


def _check_strip_moments(u, factor: float, params: HestonParams):
    for re_u in np.unique(np.real(np.asarray(u))):
        check_moment_condition(factor * float(re_u), params.maturity, params)


def hv_components(t, u, params: HestonParams, check: bool = True, monitor: bool = False):
    """(psi_{T-t}(u, 0), E[H_t(u) V_t]).

    Uses the semiflow identities so that the remaining exponential is the
    time-0 moment generating function of X_T.
    """
    if check:
        _check_strip_moments(u, 1.0, params)
    t = np.asarray(t, dtype=float)
    tail = char_exponents(params.maturity - t, u, 0.0, params)
    ce = char_exponents(t, u, tail.psi, params, monitor=monitor)
    full = char_exponents(params.maturity, u, 0.0, params)
    u = np.asarray(u, dtype=complex)
    value = (ce.dphi_dw + params.v0 * ce.dpsi_dw) * np.exp(u * params.x0 + full.phi + params.v0 * full.psi)
    return tail.psi, value


def expect_HV(t, u, params: HestonParams):
    return hv_components(t, u, params)[1]


def hhv_components(t, u1, u2, params: HestonParams, check: bool = True, monitor: bool = False):
    """(psi_{T-t}(u1, 0), psi_{T-t}(u2, 0), E[H_t(u1) H_t(u2) V_t])."""
    if check:
        _check_strip_moments(u1, 2.0, params)
        _check_strip_moments(u2, 2.0, params)
    t = np.asarray(t, dtype=float)
    tau = params.maturity - t
    a1 = char_exponents(tau, u1, 0.0, params)
    a2 = char_exponents(tau, u2, 0.0, params)
    u = np.asarray(u1, dtype=complex) + np.asarray(u2, dtype=complex)
    ce = char_exponents(t, u, a1.psi + a2.psi, params, monitor=monitor)
    expo = u * params.x0 + a1.phi + a2.phi + ce.phi + params.v0 * ce.psi
    value = (ce.dphi_dw + params.v0 * ce.dpsi_dw) * np.exp(expo)
    return a1.psi, a2.psi, value


def expect_HHV(t, u1, u2, params: HestonParams):
    return hhv_components(t, u1, u2, params)[2]
