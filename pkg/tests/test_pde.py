"""Spectral heat solution and the nonlinear finite-difference cross-check."""

import math

import numpy as np
import pytest

from zrplab.errors import BlowUpError, CflError
from zrplab.initcond import TrigPolynomial
from zrplab.pde import solve_heat, solve_parabolic_fd
from zrplab.thermo import JumpKernel, RateFunction, ThermoFunctions

KERNEL_2D = JumpKernel({(1, 0): 0.5, (0, 1): 0.5})
PROFILE_2D = TrigPolynomial(modes=(((1, -1), 1.0, 0.0),))
THERMO_LIN = ThermoFunctions(RateFunction.linear())


class TestHeatSolution:
    def test_initial_data_reproduced(self):
        sol = solve_heat(PROFILE_2D, 1.0, KERNEL_2D, THERMO_LIN)
        u = np.array([0.3, 0.1])
        assert sol(0.0, u) == pytest.approx(PROFILE_2D(u), rel=1e-14)

    def test_mode_decay_rate(self):
        # k=(1,-1), sigma=diag(1/2,1/2), Phi'(1)=1: decay of exactly 2 pi^2
        sol = solve_heat(PROFILE_2D, 1.0, KERNEL_2D, THERMO_LIN)
        assert sol.decay_rates[0] == pytest.approx(2.0 * math.pi**2, rel=1e-12)
        t = 0.05
        u = np.array([0.3, 0.1])
        assert sol(t, u) == pytest.approx(
            math.exp(-2.0 * math.pi**2 * t) * PROFILE_2D(u), rel=1e-12
        )

    def test_mass_constant_in_time(self):
        prof = TrigPolynomial(modes=(((1, -1), 0.7, 0.2),), offset=0.4)
        sol = solve_heat(prof, 1.0, KERNEL_2D, THERMO_LIN)
        for t in (0.0, 0.1, 1.0):
            assert sol.at_time(t).offset == 0.4
        assert sol.mean() == 0.4

    def test_residual_by_finite_differences(self):
        # d/dt rho - (1/2) Phi' sum sigma_ij d2_ij rho ~ 0 at random points
        rng = np.random.default_rng(7)
        prof = TrigPolynomial(modes=(((1, -1), 0.8, 0.3), ((2, -2), 0.3, 1.2)))
        sol = solve_heat(prof, 1.0, KERNEL_2D, THERMO_LIN)
        sigma = KERNEL_2D.sigma
        ht, hu = 1e-6, 2e-5
        for _ in range(5):
            t = float(rng.uniform(0.01, 0.2))
            u = rng.uniform(0, 1, 2)
            dt = (sol(t + ht, u) - sol(t - ht, u)) / (2 * ht)
            lap = 0.0
            for i in range(2):
                for j in range(2):
                    ei, ej = np.zeros(2), np.zeros(2)
                    ei[i], ej[j] = hu, hu
                    d2 = (
                        sol(t, u + ei + ej)
                        - sol(t, u + ei - ej)
                        - sol(t, u - ei + ej)
                        + sol(t, u - ei - ej)
                    ) / (4 * hu * hu)
                    lap += sigma[i, j] * d2
            assert dt == pytest.approx(0.5 * lap, abs=1e-6)

    def test_pairing_matches_quadrature(self):
        sol = solve_heat(PROFILE_2D, 1.0, KERNEL_2D, THERMO_LIN)
        test = TrigPolynomial(modes=(((1, -1), 2.0, 0.0),))
        t = 0.02
        m = 128
        grid = np.stack(np.meshgrid(*[np.arange(m) / m] * 2, indexing="ij"), axis=-1)
        quad = float(np.mean(sol(t, grid) * test(grid)))
        assert sol.pairing(t, test) == pytest.approx(quad, abs=1e-12)
        assert sol.pairing(t, test) == pytest.approx(math.exp(-2 * math.pi**2 * t), rel=1e-12)


class TestParabolicFd:
    def test_constant_initial_field_stays_constant(self):
        field = np.full((16, 16), 0.8)
        out = solve_parabolic_fd(field, KERNEL_2D, THERMO_LIN, t_final=0.01)
        assert np.allclose(out.field, 0.8, atol=1e-14)

    def test_mass_conserved(self):
        t = TrigPolynomial(modes=(((1, -1), 0.2, 0.0),), offset=1.0)
        m = 32
        grid = np.stack(np.meshgrid(*[np.arange(m) / m] * 2, indexing="ij"), axis=-1)
        out = solve_parabolic_fd(t(grid), KERNEL_2D, THERMO_LIN, t_final=0.02)
        assert out.mass_drift <= 1e-12 * max(out.t, 1.0)

    def test_linear_rate_matches_heat_solution(self):
        # Phi = identity makes the equation exactly linear
        prof = TrigPolynomial(modes=(((1, -1), 0.2, 0.0),), offset=1.0)
        m, t_final = 48, 0.02
        grid = np.stack(np.meshgrid(*[np.arange(m) / m] * 2, indexing="ij"), axis=-1)
        out = solve_parabolic_fd(prof(grid), KERNEL_2D, THERMO_LIN, t_final=t_final)
        pert = TrigPolynomial(prof.modes)  # deviation field
        sol = solve_heat(pert, 1.0, KERNEL_2D, THERMO_LIN)
        exact = 1.0 + sol(t_final, grid)
        err = np.abs(out.field - exact).max()
        assert err < 5.0 * (1.0 / m) ** 2  # O(h^2) + O(dt), dt ~ h^2

    def test_grid_refinement_second_order(self):
        prof = TrigPolynomial(modes=(((1, -1), 0.2, 0.0),), offset=1.0)
        t_final = 0.01
        errs, hs = [], []
        for m in (16, 32, 64):
            grid = np.stack(np.meshgrid(*[np.arange(m) / m] * 2, indexing="ij"), axis=-1)
            dt = 0.1 * (1.0 / m) ** 2  # fixed dt/h^2 ratio across grids
            out = solve_parabolic_fd(prof(grid), KERNEL_2D, THERMO_LIN, t_final, dt=dt)
            sol = solve_heat(TrigPolynomial(prof.modes), 1.0, KERNEL_2D, THERMO_LIN)
            errs.append(np.abs(out.field - (1.0 + sol(t_final, grid))).max())
            hs.append(1.0 / m)
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert 1.7 <= slope <= 2.3

    def test_nonlinear_linearisation_limit(self):
        # rescaled deviation of the nonlinear solve approaches the heat field
        prof = TrigPolynomial(modes=(((1, -1), 1.0, 0.0),))
        thermo = ThermoFunctions(RateFunction.indicator())
        rho_star, alpha, t_final, m = 1.0, 0.5, 0.05, 32
        grid = np.stack(np.meshgrid(*[np.arange(m) / m] * 2, indexing="ij"), axis=-1)
        heat = solve_heat(prof, rho_star, KERNEL_2D, thermo)
        gaps = []
        for n_scale in (16, 64, 256):
            eps = n_scale**-alpha
            out = solve_parabolic_fd(
                rho_star + eps * prof(grid), KERNEL_2D, thermo, t_final
            )
            rescaled = (out.field - rho_star) / eps
            gaps.append(np.abs(rescaled - heat(t_final, grid)).max())
        assert gaps[0] > gaps[1] > gaps[2]

    def test_cfl_violation_raises(self):
        field = np.full((16, 16), 1.0)
        with pytest.raises(CflError):
            solve_parabolic_fd(field, KERNEL_2D, THERMO_LIN, t_final=0.01, dt=1.0)

    def test_nonpositive_initial_raises(self):
        field = np.zeros((8, 8))
        with pytest.raises(BlowUpError):
            solve_parabolic_fd(field, KERNEL_2D, THERMO_LIN, t_final=0.01)

    def test_one_dimensional_solve(self):
        kernel = JumpKernel({(1,): 1})
        prof = TrigPolynomial(modes=(((1,), 0.1, 0.0),), offset=1.0)
        m = 64
        grid = (np.arange(m) / m)[:, None]
        out = solve_parabolic_fd(prof(grid).reshape(m), kernel, THERMO_LIN, t_final=0.01)
        sol = solve_heat(TrigPolynomial(prof.modes), 1.0, kernel, THERMO_LIN)
        exact = 1.0 + sol(0.01, grid).reshape(m)
        assert np.abs(out.field - exact).max() < 5.0 / m**2
