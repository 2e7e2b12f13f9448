"""Empirical pairing, one-block field, and convergence-report fitting."""

import math

import numpy as np
import pytest

from zrplab.initcond import TrigPolynomial
from zrplab.lattice import Configuration, Torus, translate
from zrplab.observables import (
    ConvergenceReport,
    PairingRecord,
    TestFunction,
    convergence_report,
    empirical_pairing,
    one_block_field,
)
from zrplab.thermo import RateFunction, ThermoFunctions


class TestEmpiricalPairing:
    def test_flat_configuration_gives_zero(self):
        t = Torus(2, 8)
        eta = Configuration.constant(t, 1)
        f = TestFunction(modes=(((1, -1), 2.0, 0.0),))
        assert empirical_pairing(eta, 1.0, 0.5, f) == 0.0

    def test_constant_test_function(self):
        t = Torus(2, 4)
        rng = np.random.default_rng(0)
        eta = Configuration(t, rng.integers(0, 4, t.n_sites))
        rho, alpha = 1.0, 0.5
        f = TestFunction(offset=1.0)
        expected = t.N ** (alpha - t.d) * (eta.total - rho * t.n_sites)
        assert empirical_pairing(eta, rho, alpha, f) == pytest.approx(expected, rel=1e-13)

    def test_hand_example(self):
        t = Torus(1, 2)
        eta = Configuration(t, [2, 0])
        f = TestFunction(modes=(((1,), 1.0, 0.0),))
        # 2^{-1/2} * [(2-1) cos(0) + (0-1) cos(pi)] = 2^{1/2}
        assert empirical_pairing(eta, 1.0, 0.5, f) == pytest.approx(math.sqrt(2.0), rel=1e-13)

    def test_linearity_in_test_function(self):
        t = Torus(2, 6)
        rng = np.random.default_rng(1)
        eta = Configuration(t, rng.integers(0, 3, t.n_sites))
        f1 = TestFunction(modes=(((1, -1), 1.0, 0.0),))
        f2 = TestFunction(modes=(((2, 0), 0.5, 0.4),))
        both = TestFunction(modes=f1.modes + f2.modes)
        assert empirical_pairing(eta, 1.0, 0.5, both) == pytest.approx(
            empirical_pairing(eta, 1.0, 0.5, f1) + empirical_pairing(eta, 1.0, 0.5, f2),
            rel=1e-12,
        )

    def test_translation_covariance(self):
        # sum_x eta(x+y) F(x/N) = sum_z eta(z) F((z-y)/N)
        t = Torus(2, 8)
        rng = np.random.default_rng(2)
        eta = Configuration(t, rng.integers(0, 3, t.n_sites))
        y = (3, 5)
        f = TestFunction(modes=(((1, -1), 1.0, 0.3),))
        lhs = empirical_pairing(translate(eta, y), 1.0, 0.5, f)
        rhs = empirical_pairing(eta, 1.0, 0.5, f.shifted(-np.array(y) / t.N))
        assert lhs == pytest.approx(rhs, rel=1e-11)

    def test_precomputed_values_path(self):
        t = Torus(2, 4)
        eta = Configuration.constant(t, 2)
        f = TestFunction(modes=(((1, 0), 1.0, 0.0),))
        vals = f.lattice_field(t)
        assert empirical_pairing(eta, 1.0, 0.5, test_values=vals) == pytest.approx(
            empirical_pairing(eta, 1.0, 0.5, f), rel=1e-15
        )


class TestOneBlockField:
    def test_linear_rate_vanishes_identically(self):
        t = Torus(2, 8)
        thermo = ThermoFunctions(RateFunction.linear())
        rng = np.random.default_rng(3)
        for _ in range(20):
            eta = Configuration(t, rng.integers(0, 5, t.n_sites))
            v = one_block_field(eta, 2, thermo)
            assert np.all(v == 0.0)  # exact: block averages coincide, Phi = id

    def test_constant_configuration(self):
        t = Torus(1, 9)
        thermo = ThermoFunctions(RateFunction.indicator())
        eta = Configuration.constant(t, 2)
        v = one_block_field(eta, 1, thermo)
        expected = 1.0 - thermo.fugacity_of_density(2.0)
        assert np.allclose(v, expected, atol=1e-14)

    def test_hand_example_geometric(self):
        # eta = (1,0,2), ell=1: at site 0 the block is the whole ring,
        # gbar = 2/3, etabar = 1, Phi(1) = 1/2, V = 1/6
        t = Torus(1, 3)
        thermo = ThermoFunctions(RateFunction.indicator())
        eta = Configuration(t, [1, 0, 2])
        v = one_block_field(eta, 1, thermo)
        assert v[0] == pytest.approx(2.0 / 3.0 - 0.5, rel=1e-12)

    def test_weighted_sum(self):
        t = Torus(2, 8)
        thermo = ThermoFunctions(RateFunction.indicator())
        rng = np.random.default_rng(4)
        eta = Configuration(t, rng.integers(0, 4, t.n_sites))
        f = TestFunction(modes=(((1, -1), 1.0, 0.0),))
        v, weighted = one_block_field(eta, 1, thermo, test=f, alpha=0.5)
        manual = t.N ** (-t.d - 0.5) * float(np.dot(f.lattice_field(t), v))
        assert weighted == pytest.approx(manual, rel=1e-12)

    def test_equilibrium_mean_decreases_with_block_size(self):
        # law-of-large-numbers consistency: mean |V| shrinks as the block grows
        t = Torus(2, 32)
        thermo = ThermoFunctions(RateFunction.indicator())
        phi = thermo.fugacity_of_density(1.0)
        pmf = thermo.marginal_distribution(phi, tail_mass=1e-12)
        cdf = np.cumsum(pmf)
        rng = np.random.default_rng(5)
        means = []
        for ell in (1, 2, 4, 8):
            acc = 0.0
            for _ in range(5):
                occ = np.searchsorted(cdf, rng.random(t.n_sites), side="right")
                eta = Configuration(t, occ)
                acc += float(np.abs(one_block_field(eta, ell, thermo)).mean())
            means.append(acc / 5)
        assert means[0] > means[1] > means[2] > means[3]


class TestPairingRecord:
    def test_requires_finite_reference(self):
        with pytest.raises(ValueError):
            PairingRecord(0, 0.0, "F", 1.0, math.inf)


class TestConvergenceReport:
    def test_exact_power_law(self):
        errors = {n: [2.0 / n, 2.0 / n] for n in (8, 16, 32, 64)}
        rep = convergence_report(errors, n_boot=200)
        assert rep.slope == pytest.approx(-1.0, abs=1e-6)
        assert rep.monotone_decreasing
        assert rep.ci_low == pytest.approx(-1.0, abs=1e-6)
        assert rep.ci_high == pytest.approx(-1.0, abs=1e-6)
        assert rep.ci_excludes_zero

    def test_constant_error(self):
        errors = {n: [0.5, 0.5] for n in (8, 16, 32)}
        rep = convergence_report(errors, n_boot=100)
        assert rep.slope == pytest.approx(0.0, abs=1e-9)
        assert not rep.monotone_decreasing
        assert not rep.ci_excludes_zero

    def test_noisy_decay_has_negative_slope(self):
        rng = np.random.default_rng(6)
        errors = {n: (1.0 / n) * (1.0 + 0.05 * rng.standard_normal(40)) for n in (8, 16, 32, 64)}
        rep = convergence_report(errors, n_boot=400)
        assert rep.slope < 0
        assert rep.ci_excludes_zero and rep.ci_high < 0

    def test_too_few_sizes(self):
        with pytest.raises(ValueError):
            convergence_report({8: [1, 1], 16: [0.5, 0.5]})

    def test_too_few_replicas(self):
        with pytest.raises(ValueError):
            convergence_report({8: [1.0], 16: [0.5, 0.5], 32: [0.2, 0.2]})

    def test_degenerate_zero_errors(self):
        with pytest.raises(ValueError):
            convergence_report({8: [0.0, 0.0], 16: [0.0, 0.0], 32: [0.0, 0.0]})
