"""Canonical measures, generator spectra, ensemble equivalence, tails."""

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from zrplab.ensembles import (
    DENSE_EIGEN_CAP,
    CanonicalSpace,
    canonical_expectation,
    canonical_variance,
    chain_sites,
    conditioned_site_marginal,
    cube_sites,
    detailed_balance_residual,
    enumerate_canonical,
    equivalence_gap,
    lsi_ratio_scan,
    site_marginal,
    spectral_gap,
    tail_probability_exact,
)
from zrplab.errors import CutoffError, EnumerationCapError, NotATailError
from zrplab.thermo import JumpKernel, RateFunction, ThermoFunctions, poisson_rate_I

LIN = RateFunction.linear()
IND = RateFunction.indicator()
SYM_1D = {(1,): Fraction(1, 2), (-1,): Fraction(1, 2)}


class TestEnumeration:
    def test_two_sites_one_particle(self):
        space = enumerate_canonical(2, 1, LIN)
        assert sorted(map(tuple, space.states.tolist())) == [(0, 1), (1, 0)]
        assert np.allclose(space.weights, 0.5)

    def test_two_sites_two_particles_weights(self):
        space = enumerate_canonical(2, 2, LIN)
        w = {tuple(s): wt for s, wt in zip(space.states.tolist(), space.weights)}
        assert w[(2, 0)] == pytest.approx(0.25)
        assert w[(1, 1)] == pytest.approx(0.5)
        assert w[(0, 2)] == pytest.approx(0.25)

    def test_empty_block(self):
        space = enumerate_canonical(2, 0, LIN)
        assert space.states.tolist() == [[0, 0]] and space.weights.tolist() == [1.0]

    def test_state_count(self):
        space = enumerate_canonical(4, 3, IND)
        assert space.n_states == math.comb(3 + 4 - 1, 3)
        assert np.all(space.states.sum(axis=1) == 3)

    def test_cap(self):
        with pytest.raises(EnumerationCapError):
            enumerate_canonical(30, 30, LIN, cap=1000)

    def test_indicator_weights_uniform(self):
        space = enumerate_canonical(3, 4, IND)
        assert np.allclose(space.weights, 1.0 / space.n_states)

    def test_no_density_parameter(self):
        # the canonical measure carries no density/fugacity field at all
        fields = set(CanonicalSpace.__dataclass_fields__)
        assert fields == {"coords", "j", "states", "weights", "g_values"}

    def test_cube_geometry(self):
        coords = cube_sites(1, 2)
        assert coords.shape == (9, 2)
        space = enumerate_canonical(coords, 2, LIN)
        assert space.n_sites == 9


class TestExpectationAndMarginal:
    def test_expectation_two_states(self):
        space = enumerate_canonical(2, 1, LIN)
        assert canonical_expectation(space, space.g_values[space.states[:, 0]]) == pytest.approx(0.5)

    def test_empty_block_rate_zero(self):
        space = enumerate_canonical(2, 0, LIN)
        assert canonical_expectation(space, space.g_values[space.states[:, 0]]) == 0.0

    def test_callable_observable(self):
        space = enumerate_canonical(3, 2, LIN)
        a = canonical_expectation(space, lambda s: float(s[1]))
        assert a == pytest.approx(2.0 / 3.0)  # exchangeability: j / n

    def test_site_marginal_sums_to_one(self):
        space = enumerate_canonical(4, 5, IND)
        pmf = site_marginal(space)
        assert pmf.sum() == pytest.approx(1.0)
        assert float(np.dot(pmf, np.arange(pmf.size))) == pytest.approx(5.0 / 4.0)

    def test_marginal_matches_convolution_oracle(self):
        # dual route: exhaustive enumeration vs conditioned product convolution
        thermo = ThermoFunctions(IND)
        for n, j in ((2, 3), (3, 3), (4, 2)):
            enum_pmf = site_marginal(enumerate_canonical(n, j, IND))
            conv_pmf = conditioned_site_marginal(thermo, n, 0.4, j)
            assert np.abs(enum_pmf - conv_pmf).max() < 1e-12

    def test_conditioned_marginal_fugacity_free(self):
        thermo = ThermoFunctions(LIN)
        a = conditioned_site_marginal(thermo, 3, 0.3, 4)
        b = conditioned_site_marginal(thermo, 3, 0.9, 4)
        assert np.abs(a - b).max() < 1e-12


class TestSymmetricGenerator:
    def test_detailed_balance_exhaustive(self):
        for rate in (LIN, IND):
            for n, j in ((2, 2), (3, 3), (4, 3)):
                space = enumerate_canonical(n, j, rate)
                assert detailed_balance_residual(space, SYM_1D) < 1e-14

    def test_detailed_balance_from_kernel(self):
        kernel = JumpKernel({(1,): 0.7, (-1,): 0.3})
        space = enumerate_canonical(3, 2, LIN)
        assert detailed_balance_residual(space, kernel) < 1e-14

    def test_row_sums_vanish(self):
        from zrplab.ensembles import build_symmetric_generator

        space = enumerate_canonical(3, 2, IND)
        gen, _ = build_symmetric_generator(space, SYM_1D)
        assert np.abs(np.asarray(gen.sum(axis=1))).max() < 1e-14


class TestSpectralGap:
    def test_two_state_gap_exact(self):
        space = enumerate_canonical(2, 1, LIN)
        res = spectral_gap(space, SYM_1D)
        assert res.gap == pytest.approx(1.0, abs=1e-12)
        assert res.kappa == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_marker(self):
        res = spectral_gap(enumerate_canonical(3, 0, LIN), SYM_1D)
        assert res.degenerate and res.gap is None

    def test_linear_rate_matches_single_walker(self):
        # independent particles: many-body gap equals the walker gap on the
        # n-site segment, 1 - cos(pi/n) for s(+-1) = 1/2
        for n in range(2, 7):
            space = enumerate_canonical(n, n, LIN)
            res = spectral_gap(space, SYM_1D)
            assert res.gap == pytest.approx(1.0 - math.cos(math.pi / n), rel=1e-9)

    def test_gap_scaling_slope(self):
        ns = list(range(2, 8))
        gaps = [spectral_gap(enumerate_canonical(n, n, LIN), SYM_1D).gap for n in ns]
        assert all(g > 0 for g in gaps)
        slope = np.polyfit(np.log(ns), np.log(gaps), 1)[0]
        assert -2.4 <= slope <= -1.6

    def test_sparse_path_matches_dense(self):
        space = enumerate_canonical(5, 5, IND)  # 126 states
        dense = spectral_gap(space, SYM_1D)
        sparse = spectral_gap(space, SYM_1D, dense_cap=10)
        assert dense.method == "dense" and sparse.method != "dense"
        assert sparse.gap == pytest.approx(dense.gap, rel=1e-8)


class TestCanonicalVariance:
    def test_linear_rate_exactly_zero(self):
        for n in (2, 3, 5, 7):
            res = canonical_variance(enumerate_canonical(n, n, LIN), M=3.0)
            assert res.variance == 0.0  # block-averaged rate is constant

    def test_two_sites_linear(self):
        res = canonical_variance(enumerate_canonical(2, 1, LIN), M=1.0)
        assert res.variance == 0.0
        assert res.site_rate_expectation == pytest.approx(0.5)

    def test_indicator_matches_brute_force(self):
        space = enumerate_canonical(3, 3, IND)
        res = canonical_variance(space, M=2.0)
        vals = (space.states >= 1).astype(float).mean(axis=1)
        mean = float(np.dot(space.weights, vals))
        brute = float(np.dot(space.weights, (vals - mean) ** 2))
        assert res.variance == pytest.approx(brute, rel=1e-12)

    def test_cutoff_precondition(self):
        with pytest.raises(CutoffError):
            canonical_variance(enumerate_canonical(3, 9, IND), M=1.0)

    def test_scaled_variance_bounded(self):
        from zrplab.observables import spearman_exact

        ns = (3, 5, 7, 9)
        nv = [canonical_variance(enumerate_canonical(n, n, IND), M=2.0).n_times_variance for n in ns]
        rho, p = spearman_exact(ns, nv)
        # saturates toward its limit: any trend is not significantly positive
        assert not (rho > 0 and p < 0.05)
        assert max(nv) < 2.0 * min(nv)


class TestLsiScan:
    def test_nonnegative_and_monotone_in_trials(self):
        space = enumerate_canonical(4, 4, LIN)
        a = lsi_ratio_scan(space, SYM_1D, 50, np.random.default_rng(0))
        b = lsi_ratio_scan(space, SYM_1D, 200, np.random.default_rng(0))
        assert 0.0 <= a.lower_bound <= b.lower_bound

    def test_beats_any_supplied_trial(self):
        # the scan maximum dominates the ratio of a hand-picked function
        from zrplab.ensembles import build_symmetric_generator

        space = enumerate_canonical(3, 3, LIN)
        res = lsi_ratio_scan(space, SYM_1D, 100, np.random.default_rng(1))
        _, (rows, cols, vals) = build_symmetric_generator(space, SYM_1D)
        w = space.weights
        f = space.states[:, 0].astype(float) + 0.3
        f = f / math.sqrt(float(np.dot(w, f * f)))
        ent = float(np.dot(w, f * f * np.log(f * f)))
        dirich = 0.5 * float(np.dot(w[rows] * vals, (f[cols] - f[rows]) ** 2))
        assert res.lower_bound >= ent / dirich * (1.0 - 1e-9)

    def test_degenerate_space(self):
        res = lsi_ratio_scan(enumerate_canonical(2, 0, LIN), SYM_1D, 10, np.random.default_rng(2))
        assert res.lower_bound == 0.0

    def test_growth_no_faster_than_quadratic(self):
        ns = (3, 5, 7)
        rng = np.random.default_rng(3)
        lbs = [lsi_ratio_scan(enumerate_canonical(n, n, LIN), SYM_1D, 1000, rng).lower_bound for n in ns]
        slope = np.polyfit(np.log(ns), np.log(lbs), 1)[0]
        assert slope <= 2.4


class TestTailProbability:
    def test_single_site_is_marginal_tail(self):
        thermo = ThermoFunctions(LIN)
        res = tail_probability_exact(thermo, 1, 1.0, 2.0)
        assert res.p_tail == pytest.approx(float(stats.poisson.sf(2, 1)), rel=1e-10)

    def test_matches_poisson_convolution(self):
        thermo = ThermoFunctions(LIN)
        for n in (4, 8, 16, 32):
            res = tail_probability_exact(thermo, n, 1.0, 2.0)
            assert res.p_tail == pytest.approx(float(stats.poisson.sf(2 * n, n)), rel=1e-9)

    def test_ratio_approaches_one_monotonically(self):
        thermo = ThermoFunctions(LIN)
        ratios = [tail_probability_exact(thermo, n, 1.0, 2.0).ratio for n in (4, 8, 16, 32)]
        assert all(a > b for a, b in zip(ratios, ratios[1:]))
        assert all(r > 1.0 for r in ratios)

    def test_rate_value_matches_closed_form(self):
        thermo = ThermoFunctions(LIN)
        res = tail_probability_exact(thermo, 4, 1.0, 2.0)
        assert res.rate_value == pytest.approx(poisson_rate_I(2.0, 1.0), abs=1e-9)

    def test_decreasing_in_threshold(self):
        thermo = ThermoFunctions(LIN)
        p = [tail_probability_exact(thermo, 6, 1.0, m).p_tail for m in (1.5, 2.0, 2.5, 3.0)]
        assert all(a > b for a, b in zip(p, p[1:]))

    def test_not_a_tail(self):
        thermo = ThermoFunctions(LIN)
        with pytest.raises(NotATailError):
            tail_probability_exact(thermo, 4, 1.0, 0.5)

    def test_geometric_tail(self):
        thermo = ThermoFunctions(IND)
        res = tail_probability_exact(thermo, 4, 0.5, 3.0)
        # negative binomial: sum of 4 geometrics with success prob 1/2
        exact = float(stats.nbinom.sf(12, 4, 0.5))
        assert res.p_tail == pytest.approx(exact, rel=1e-9)
