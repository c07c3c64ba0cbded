import math

import numpy as np
import pytest
from scipy.integrate import quad

from models.data_models import ClaimKind, ClaimSet, ClaimSpec, HestonParams
from models.errors import InvalidParameters, NoValidStrip, PoleError
from pricing.claims import (choose_strip, explosion_bound, laplace_transform, neuberger_portfolio,
                            neuberger_weights, payoff, prepare_claim_set)
from pricing.heston_model import critical_time, swap_rate


def invert_transform(x: float, strike: float, R: float) -> float:
    """(1 / 2 pi i) integral of exp(u x) K^(1-u) / (u (u - 1)) over Re u = R, by oscillatory quadrature."""
    z = x - math.log(strike)
    sign = math.copysign(1.0, z)

    def h(y):
        u = R + 1j * y
        return 1 / (u * (u - 1))

    opts = dict(epsabs=1e-12, limlst=200)
    cos_part, _ = quad(lambda y: h(y).real, 0, np.inf, weight="cos", wvar=abs(z), **opts)
    sin_part, _ = quad(lambda y: h(y).imag, 0, np.inf, weight="sin", wvar=abs(z), **opts)
    return math.exp(R * x) * strike ** (1 - R) / math.pi * (cos_part - sign * sin_part)


class TestLaplaceTransform:
    def test_values(self):
        assert complex(laplace_transform(2.0, 100.0)) == pytest.approx(1 / (400j * math.pi), rel=1e-14)
        assert complex(laplace_transform(-1.0, 1.0)) == pytest.approx(1 / (4j * math.pi), rel=1e-14)

    def test_poles(self):
        with pytest.raises(PoleError):
            laplace_transform(0.0, 100.0)
        with pytest.raises(PoleError):
            laplace_transform(1.0, 100.0)

    def test_conjugation(self):
        # the 1 / (2 pi i) factor flips the sign under conjugation
        u = 2.0 + 3.5j
        assert complex(laplace_transform(np.conj(u), 90.0)) == pytest.approx(
            -np.conj(complex(laplace_transform(u, 90.0))), rel=1e-14)

    def test_broadcasts_over_strikes(self):
        u = np.array([2 + 1j, 2 + 2j])
        values = laplace_transform(u[:, None], np.array([90.0, 110.0])[None, :])
        assert values.shape == (2, 2)
        assert values[1, 0] == pytest.approx(complex(laplace_transform(u[1], 90.0)))

    def test_call_inversion(self):
        assert invert_transform(math.log(110.0), 100.0, 2.0) == pytest.approx(10.0, abs=1e-6)

    def test_put_inversion(self):
        assert invert_transform(math.log(90.0), 100.0, -1.0) == pytest.approx(10.0, abs=1e-6)

    def test_out_of_the_money_inversion(self):
        assert invert_transform(math.log(90.0), 100.0, 2.0) == pytest.approx(0.0, abs=1e-6)


class TestPayoff:
    def test_call_and_put(self):
        s = np.array([80.0, 100.0, 120.0])
        np.testing.assert_array_equal(payoff(ClaimSpec(ClaimKind.CALL, strike=100.0), s), [0.0, 0.0, 20.0])
        np.testing.assert_array_equal(payoff(ClaimSpec(ClaimKind.PUT, strike=100.0), s), [20.0, 0.0, 0.0])

    def test_swap_has_no_payoff_function(self):
        with pytest.raises(InvalidParameters):
            payoff(ClaimSpec(ClaimKind.VARIANCE_SWAP), 100.0)


class TestStrips:
    def test_put_default(self, benchmark_params):
        assert choose_strip(ClaimSpec(ClaimKind.PUT, strike=90.0), benchmark_params) == -1.0

    def test_call_default(self, benchmark_params):
        R = choose_strip(ClaimSpec(ClaimKind.CALL, strike=110.0), benchmark_params)
        assert 1 < R <= 2.0
        assert benchmark_params.maturity < critical_time(2 * R, benchmark_params)

    def test_explosion_bound(self, benchmark_params):
        u_max = explosion_bound(benchmark_params)
        assert u_max > 4
        if math.isfinite(u_max):
            assert critical_time(u_max, benchmark_params) == pytest.approx(benchmark_params.maturity, rel=1e-8)

    def test_no_valid_call_strip(self):
        # E[S^2] already explodes before T = 1
        p = HestonParams(kappa=0.04, lam=0.1, rho=0.99, sigma=3.0, v0=0.04)
        assert critical_time(2.0, p) < 1.0
        with pytest.raises(NoValidStrip):
            choose_strip(ClaimSpec(ClaimKind.CALL, strike=110.0), p)

    def test_prepare_fills_strips_and_swap_strike(self, benchmark_params, two_options):
        prepared = prepare_claim_set(two_options, benchmark_params)
        assert prepared.target.swap_k == pytest.approx(swap_rate(benchmark_params))
        assert prepared.supplementary[0].strip_R == -1.0
        assert prepared.supplementary[1].strip_R > 1

    def test_prepare_keeps_explicit_strip(self, benchmark_params):
        claims = ClaimSet(ClaimSpec(ClaimKind.VARIANCE_SWAP, swap_k=0.03),
                          [ClaimSpec(ClaimKind.CALL, strike=120.0, strip_R=1.5)])
        prepared = prepare_claim_set(claims, benchmark_params)
        assert prepared.target.swap_k == 0.03
        assert prepared.supplementary[0].strip_R == 1.5

    def test_wrong_side_strip_rejected(self):
        with pytest.raises(InvalidParameters):
            ClaimSpec(ClaimKind.PUT, strike=90.0, strip_R=0.5)
        with pytest.raises(InvalidParameters):
            ClaimSpec(ClaimKind.CALL, strike=110.0, strip_R=0.5)


class TestNeuberger:
    def test_single_strike(self):
        np.testing.assert_allclose(neuberger_weights([100.0], dk=5.0), [1e-3], rtol=1e-14)

    def test_quadratic_scaling(self):
        w100 = neuberger_weights([100.0], dk=5.0)
        w200 = neuberger_weights([200.0], dk=5.0)
        assert w200[0] == pytest.approx(w100[0] / 4, rel=1e-14)

    def test_single_strike_needs_spacing(self):
        with pytest.raises(InvalidParameters):
            neuberger_weights([100.0])

    def test_unsorted_rejected(self):
        with pytest.raises(InvalidParameters):
            neuberger_weights([100.0, 90.0])

    def test_standard_grid_slope(self):
        strikes = np.arange(50.0, 155.0, 5.0)
        w = neuberger_weights(strikes)
        slope = np.polyfit(np.log(strikes[1:-1]), np.log(w[1:-1]), 1)[0]
        assert slope == pytest.approx(-2.0, abs=1e-10)
        assert w[0] == pytest.approx(0.5 * 2 * 5.0 / 50.0 ** 2)

    def test_portfolio_on_standard_grid(self):
        claims = ClaimSet.standard_grid()
        v = neuberger_portfolio(claims, 100.0)
        assert len(v) == 21
        assert np.all(v > 0)
        np.testing.assert_allclose(v, neuberger_weights(claims.strikes))

    def test_portfolio_skips_in_the_money_claims(self):
        claims = ClaimSet(ClaimSpec(ClaimKind.VARIANCE_SWAP),
                          [ClaimSpec(ClaimKind.CALL, strike=90.0), ClaimSpec(ClaimKind.PUT, strike=95.0),
                           ClaimSpec(ClaimKind.CALL, strike=105.0)])
        v = neuberger_portfolio(claims, 100.0)
        assert v[0] == 0.0
        assert v[1] > 0 and v[2] > 0
