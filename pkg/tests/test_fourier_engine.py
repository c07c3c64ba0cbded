import math
import os
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from cli.commands import log_log_slope
from database.moment_cache import MomentCache
from models.data_models import ClaimKind, ClaimSet, ClaimSpec
from models.errors import QuadratureFailure
from pricing.claims import prepare_claim_set
from pricing.fourier_engine import (QuadratureSettings, clenshaw_curtis, compute_A, compute_B, compute_B_entry,
                                    compute_C, compute_C_entry, compute_moments, extended_covariance,
                                    integrate_panels, integrate_strip, option_price, params_hash,
                                    reciprocal_condition, time_rule)
from pricing.heston_model import mean_variance, swap_rate
from solver.hedge_solver import nonneg_constraints, solve_constrained
from solver.sparse_selector import brute_force, leaps_and_bounds


def gaussian(R):
    # i f(R + iy) = exp(-y^2)
    return lambda u: -1j * np.exp((u - R) ** 2)


class TestIntegrateStrip:
    def test_real_mode(self):
        res = integrate_strip(gaussian(0.5), 0.5, tol=1e-11)
        assert res.value == pytest.approx(math.sqrt(math.pi), abs=1e-9)
        assert res.n_eval > 0

    def test_full_mode(self):
        res = integrate_strip(gaussian(0.5), 0.5, tol=1e-11, real=False)
        assert res.value.real == pytest.approx(math.sqrt(math.pi), abs=1e-9)
        assert abs(res.value.imag) < 1e-12

    def test_vector_of_strips(self):
        R = np.array([-1.0, 2.0])
        res = integrate_strip(lambda u: -1j * np.exp((u - R) ** 2), R, tol=1e-11)
        np.testing.assert_allclose(res.value, math.sqrt(math.pi), atol=1e-9)

    def test_reports_imaginary_part(self):
        res = integrate_strip(gaussian(0.5), 0.5, tol=1e-11)
        assert 0 <= res.imag < 1e-12

    def test_small_imaginary_leak_rejected(self):
        # i f(R + iy) = exp(-y^2) (1 + 1e-4 i): the imaginary part integrates to 1e-4 sqrt(pi)
        with pytest.raises(QuadratureFailure):
            integrate_strip(lambda u: (1e-4 - 1j) * np.exp((u - 0.5) ** 2), 0.5, tol=1e-11)

    def test_asymmetric_integrand_rejected(self):
        with pytest.raises(QuadratureFailure):
            integrate_strip(lambda u: np.exp((u - 0.5) ** 2), 0.5)

    def test_slow_decay_exhausts_budget(self):
        with pytest.raises(QuadratureFailure):
            integrate_strip(lambda u: -1j / (1 - (u - 0.5) ** 2), 0.5, tol=1e-10, y_max=256.0)


class TestPanels:
    def test_clenshaw_curtis_exact_for_polynomials(self):
        x, w = clenshaw_curtis(16)
        assert np.sum(w) == pytest.approx(2.0, rel=1e-14)
        assert np.dot(w, x ** 14) == pytest.approx(2.0 / 15, rel=1e-12)
        assert abs(np.dot(w, x ** 15)) < 1e-14

    def test_coarse_rule_is_nested(self):
        x, _ = clenshaw_curtis(32)
        np.testing.assert_allclose(x[::2], clenshaw_curtis(16)[0], atol=1e-15)

    def test_gaussian(self):
        calls = []

        def G(y):
            calls.append(len(y))
            return 2 * np.exp(-y ** 2) + 0j, 0.0, len(y)

        res = integrate_panels(G, tol=1e-11)
        assert res.value == pytest.approx(math.sqrt(math.pi), abs=1e-10)
        assert res.imag == 0.0
        assert res.n_eval == sum(calls)
        assert all(n == 33 for n in calls)

    def test_imaginary_part_rejected(self):
        with pytest.raises(QuadratureFailure):
            integrate_panels(lambda y: ((1 + 1j) * np.exp(-y ** 2), 0.0, len(y)), tol=1e-10)

    def test_value_error_enters_estimate(self):
        res = integrate_panels(lambda y: (np.exp(-y ** 2) + 0j, 1e-9, len(y)), tol=1e-10)
        assert res.abs_err >= 16 * 1e-9

    def test_slow_decay_exhausts_budget(self):
        with pytest.raises(QuadratureFailure):
            integrate_panels(lambda y: (1 / (1 + y ** 2) + 0j, 0.0, len(y)), tol=1e-10, y_max=256.0)


class TestTimeRule:
    def test_exact_for_polynomials(self):
        t, w = time_rule(2.0, 8)
        assert np.all(np.diff(t) > 0)
        assert np.sum(w * t ** 5) == pytest.approx(2.0 ** 6 / 6, rel=1e-13)


class TestSwapResidualVariance:
    def test_benchmark_ratio(self, benchmark_params):
        assert math.sqrt(compute_A(benchmark_params)) / swap_rate(benchmark_params) == pytest.approx(0.597, abs=3e-3)

    def test_closed_form_matches_quadrature(self, benchmark_params):
        p = benchmark_params
        lead = p.sigma ** 2 * (1 - p.rho ** 2) / p.lam ** 2

        def integrand(t):
            return (1 - math.exp(-p.lam * (p.maturity - t))) ** 2 * float(mean_variance(t, p))

        integral, _ = quad(integrand, 0, p.maturity, epsabs=1e-15, epsrel=1e-13)
        assert compute_A(p) == pytest.approx(lead * integral, rel=1e-10)

    @pytest.mark.parametrize("rho", [-1.0, 1.0])
    def test_perfect_correlation(self, benchmark_params, rho):
        assert compute_A(benchmark_params.with_rho(rho)) == 0.0

    def test_correlation_scaling(self, benchmark_params):
        ratios = [compute_A(benchmark_params.with_rho(r)) / (1 - r ** 2) for r in (-0.99, -0.5, 0.0, 0.5, 0.99)]
        np.testing.assert_allclose(ratios, ratios[2], rtol=1e-10)

    def test_short_maturity(self, benchmark_params):
        from dataclasses import replace
        assert compute_A(replace(benchmark_params, maturity=1e-6)) < 1e-12


class TestOptionPrice:
    def test_put_call_parity(self, benchmark_params):
        for k in (90.0, 100.0, 120.0):
            call = option_price(benchmark_params, ClaimSpec(ClaimKind.CALL, strike=k))
            put = option_price(benchmark_params, ClaimSpec(ClaimKind.PUT, strike=k))
            assert call - put == pytest.approx(benchmark_params.s0 - k, abs=1e-7)

    def test_above_intrinsic(self, benchmark_params):
        call = option_price(benchmark_params, ClaimSpec(ClaimKind.CALL, strike=90.0))
        assert 10.0 < call < benchmark_params.s0

    def test_strip_independence(self, benchmark_params):
        a = option_price(benchmark_params, ClaimSpec(ClaimKind.PUT, strike=95.0, strip_R=-1.0))
        b = option_price(benchmark_params, ClaimSpec(ClaimKind.PUT, strike=95.0, strip_R=-0.5))
        assert a == pytest.approx(b, abs=1e-8)

    def test_swap_at_inception(self, benchmark_params):
        swap = ClaimSpec(ClaimKind.VARIANCE_SWAP, swap_k=0.02)
        assert option_price(benchmark_params, swap) == pytest.approx(swap_rate(benchmark_params) - 0.02)


class TestCovarianceEntries:
    @pytest.mark.parametrize("rho", [-1.0, 1.0])
    def test_perfect_correlation_vanishes(self, benchmark_params, two_options, fast_settings, rho):
        B = compute_B(benchmark_params.with_rho(rho), two_options, fast_settings)
        np.testing.assert_array_equal(B, 0.0)

    def test_put_contour_shift(self, benchmark_params, fast_settings):
        put = ClaimSpec(ClaimKind.PUT, strike=90.0)
        a = compute_B_entry(benchmark_params, put.with_strip(-1.0), fast_settings).value
        b = compute_B_entry(benchmark_params, put.with_strip(-0.8), fast_settings).value
        assert a == pytest.approx(b, rel=1e-6)

    def test_call_contour_shift(self, benchmark_params, fast_settings):
        call = ClaimSpec(ClaimKind.CALL, strike=110.0)
        a = compute_B_entry(benchmark_params, call.with_strip(2.0), fast_settings).value
        b = compute_B_entry(benchmark_params, call.with_strip(1.7), fast_settings).value
        assert a == pytest.approx(b, rel=1e-6)

    def test_entries_are_finite(self, benchmark_params, two_options, fast_settings):
        B = compute_B(benchmark_params, two_options, fast_settings)
        assert np.all(np.isfinite(B))
        assert np.any(B != 0)

    def test_looser_tolerance_needs_fewer_nodes(self, benchmark_params, fast_settings):
        put = ClaimSpec(ClaimKind.PUT, strike=90.0, strip_R=-1.0)
        counts = [compute_B_entry(benchmark_params, put, replace(fast_settings, strip_tol=tol)).n_eval
                  for tol in (1e-12, 1e-10, 1e-8, 1e-6)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert counts[0] > counts[-1]

    def test_workers_do_not_change_values(self, benchmark_params, two_options, fast_settings):
        serial = compute_B(benchmark_params, two_options, fast_settings)
        parallel = compute_B(benchmark_params, two_options, replace(fast_settings, workers=2))
        np.testing.assert_array_equal(serial, parallel)

    @pytest.mark.slow
    def test_entry_symmetry_before_mirroring(self, benchmark_params, two_options, fast_settings):
        claims = prepare_claim_set(two_options, benchmark_params)
        p90, c110 = claims.supplementary
        pc = compute_C_entry(benchmark_params, p90, c110, fast_settings)
        cp = compute_C_entry(benchmark_params, c110, p90, fast_settings)
        assert abs(pc.value - cp.value) <= 1e-8 * abs(pc.value)
        assert pc.imag < 1e-8 and cp.imag < 1e-8
        assert compute_C_entry(benchmark_params, p90, p90, fast_settings).value > 0

    @pytest.mark.slow
    def test_entries_independent_of_companions_and_workers(self, benchmark_params, two_options, fast_settings):
        claims = prepare_claim_set(two_options, benchmark_params)
        meta = {}
        full = compute_C(benchmark_params, claims, replace(fast_settings, workers=2), meta=meta)
        alone = compute_C(benchmark_params, claims.subset([1]), fast_settings)
        assert full[1, 1] == alone[0, 0]
        assert meta["C_abs_err"][0][1] == meta["C_abs_err"][1][0]

    @pytest.mark.slow
    def test_small_moments_are_psd(self, benchmark_params, two_options, fast_settings):
        m = compute_moments(benchmark_params, two_options, fast_settings)
        np.testing.assert_array_equal(m.C, m.C.T)
        assert np.all(np.diag(m.C) > 0)
        E, min_eig = extended_covariance(m)
        assert min_eig > -1e-8 * np.trace(E)


class TestMomentAssembly:
    def test_cache_round_trip(self, benchmark_params, two_options, fast_settings, tmp_path):
        params = benchmark_params.with_rho(-1.0)
        cache = MomentCache(str(tmp_path))
        first = compute_moments(params, two_options, fast_settings, cache)
        assert cache.count() == 2 + 3
        second = compute_moments(params, two_options, fast_settings, cache)
        assert cache.count() == 5
        np.testing.assert_array_equal(first.B, second.B)
        np.testing.assert_array_equal(first.C, second.C)
        assert first.params_hash == second.params_hash
        assert first.quad_meta["strips"] == [-1.0, 2.0]

    def test_hash_tracks_settings(self, benchmark_params, two_options):
        claims = prepare_claim_set(two_options, benchmark_params)
        a = params_hash(benchmark_params, claims, QuadratureSettings(time_nodes=32))
        b = params_hash(benchmark_params, claims, QuadratureSettings(time_nodes=64))
        c = params_hash(benchmark_params, claims, QuadratureSettings(time_nodes=32, workers=4))
        assert a != b
        assert a == c

    def test_reciprocal_condition(self):
        assert reciprocal_condition(np.eye(3)) == pytest.approx(1.0)
        assert reciprocal_condition(np.ones((2, 2))) < 1e-14
        assert reciprocal_condition(np.zeros((0, 0))) == 1.0


@pytest.mark.slow
class TestFullGrid:
    """The full 21-strike experiment; hours of CPU on one core."""

    @pytest.fixture(scope="class")
    def moments(self, tmp_path_factory):
        from models.data_models import HestonParams
        settings = QuadratureSettings(workers=os.cpu_count() or 1)
        cache = MomentCache(str(tmp_path_factory.mktemp("cache")))
        return compute_moments(HestonParams.benchmark(), ClaimSet.standard_grid(), settings, cache)

    def test_conditioning(self, moments):
        assert 3.7e-7 <= moments.quad_meta["rcond_C"] <= 3.3e-6

    def test_full_set_error(self, moments):
        sol = solve_constrained(moments, nonneg_constraints(moments.n))
        assert math.sqrt(sol.eps2) / moments.k_star == pytest.approx(0.016, abs=0.003)

    @pytest.mark.parametrize("d,expected", [(3, 0.057), (6, 0.034)])
    def test_sparse_errors(self, moments, d, expected):
        step = leaps_and_bounds(moments, d, nonneg=True)
        assert step.rel_err == pytest.approx(expected, abs=0.003)

    def test_exact_search_on_ten_option_subgrid(self, moments):
        sub = moments.subset(range(1, 21, 2))
        assert sub.n == 10
        for d in range(sub.n + 1):
            exact = brute_force(sub, d, nonneg=True)
            bnb = leaps_and_bounds(sub, d, nonneg=True)
            assert bnb.support == exact.support
            assert bnb.eps2 == exact.eps2

    def test_six_option_portfolio_shape(self, moments):
        step = leaps_and_bounds(moments, 6, nonneg=True)
        strikes = np.asarray(moments.strikes)
        assert -2.8 <= log_log_slope(strikes, step.v) <= -1.2
        assert step.v[strikes < 100.0].sum() > step.v[strikes > 100.0].sum()
