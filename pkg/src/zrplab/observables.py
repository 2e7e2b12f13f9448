"""Empirical fields paired against the limiting evolution.

The headline observable is the rescaled pairing

    X = N^{alpha - d} sum_x (eta(x) - rho*) F(x/N),

whose across-replica mean tracks the torus integral of the heat-equation
solution against F.  The one-block field measures the local replacement
error between block-averaged jump rates and Phi of the block density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .initcond import TrigPolynomial
from .lattice import Configuration, Torus, block_average_field
from .thermo import ThermoFunctions

__all__ = [
    "TestFunction",
    "PairingRecord",
    "ConvergenceReport",
    "empirical_pairing",
    "one_block_field",
    "convergence_report",
    "spearman_exact",
]


@dataclass(frozen=True)
class TestFunction(TrigPolynomial):
    """A trigonometric test function with an identifier for records."""

    __test__ = False  # not a pytest suite, despite the name

    name: str = "F"


@dataclass(frozen=True)
class PairingRecord:
    """One empirical-pairing measurement; immutable once written."""

    replica: int
    t: float
    test_id: str
    value: float
    reference: float

    def __post_init__(self):
        if not np.isfinite(self.reference):
            raise ValueError("reference value must be finite")


def empirical_pairing(
    eta: Configuration,
    rho_star: float,
    alpha: float,
    test: TrigPolynomial | None = None,
    test_values: np.ndarray | None = None,
) -> float:
    """X = N^{alpha-d} sum_x (eta(x) - rho*) F(x/N); exact finite sum.

    ``test_values`` may carry precomputed lattice values of F (one pass of
    F over the lattice is the only cost worth caching across replicas).
    """
    torus = eta.torus
    if test_values is None:
        if test is None:
            raise ValueError("need a test function or its lattice values")
        test_values = test.lattice_field(torus)
    dev = eta.occupancies.astype(np.float64) - rho_star
    return float(torus.N ** (alpha - torus.d) * np.dot(dev, test_values))


def one_block_field(
    eta: Configuration,
    ell: int,
    thermo: ThermoFunctions,
    test: TrigPolynomial | None = None,
    alpha: float | None = None,
):
    """Per-site replacement error V(y) = gbar_ell(y) - Phi(etabar_ell(y)).

    Block averages wrap periodically.  Returns the flat V array; when a
    test function and alpha are supplied, returns (V, weighted) with

        weighted = N^{-d-alpha} sum_y F(y/N) V(y).
    """
    torus = eta.torus
    kmax = int(eta.occupancies.max(initial=0))
    g_field = thermo.rate.table(max(kmax, 1))[eta.occupancies]
    gbar = block_average_field(g_field, ell, torus)
    etabar = block_average_field(eta.occupancies, ell, torus)
    uniq, inverse = np.unique(etabar, return_inverse=True)
    phi_vals = np.array([thermo.fugacity_of_density(float(v)) for v in uniq])
    v = gbar - phi_vals[inverse]
    if test is None:
        return v
    if alpha is None:
        raise ValueError("alpha is required for the weighted sum")
    weights = test.lattice_field(torus)
    weighted = float(torus.N ** (-torus.d - alpha) * np.dot(weights, v))
    return v, weighted


@dataclass(frozen=True)
class ConvergenceReport:
    """Least-squares decay rate of errors against N, with bootstrap CI."""

    ns: tuple
    mean_errors: tuple
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    monotone_decreasing: bool
    n_boot: int

    @property
    def ci_excludes_zero(self) -> bool:
        # beyond-roundoff exclusion only: a degenerate fit of identical
        # values yields slopes of order 1e-17 with an arbitrary sign
        return self.ci_high < -1e-12 or self.ci_low > 1e-12


def spearman_exact(x, y) -> tuple:
    """Spearman rank correlation with the exact two-sided permutation
    p-value (all n! rank permutations; meant for short grids where the
    usual t-approximation degenerates).

    Returns (rho, p_two_sided).
    """
    from itertools import permutations

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n < 3 or n > 8:
        raise ValueError("exact permutation test supported for 3 <= n <= 8")

    def rank(a):
        order = np.argsort(a)
        r = np.empty(n)
        r[order] = np.arange(n, dtype=np.float64)
        return r

    rx, ry = rank(x), rank(y)

    def rho_of(r1, r2):
        c = np.corrcoef(r1, r2)[0, 1]
        return float(c)

    observed = rho_of(rx, ry)
    count = 0
    total = 0
    for perm in permutations(range(n)):
        total += 1
        if abs(rho_of(rx, ry[list(perm)])) >= abs(observed) - 1e-12:
            count += 1
    return observed, count / total


def convergence_report(
    errors_by_n: dict,
    n_boot: int = 1000,
    seed: int = 0,
) -> ConvergenceReport:
    """Fit log(mean error) against log N across >= 3 lattice sizes.

    ``errors_by_n`` maps N to the per-replica error samples (>= 2 each).
    Bootstrap resamples replicas within each N to get a slope interval.
    Degenerate inputs (a nonpositive mean error, which has no log) raise
    ValueError.
    """
    ns = sorted(int(n) for n in errors_by_n)
    if len(ns) < 3:
        raise ValueError("need at least 3 lattice sizes")
    samples = {n: np.asarray(errors_by_n[n], dtype=np.float64) for n in ns}
    for n in ns:
        if samples[n].size < 2:
            raise ValueError(f"need at least 2 replicas at N={n}")
    means = np.array([samples[n].mean() for n in ns])
    if np.any(means <= 0.0):
        raise ValueError("degenerate input: nonpositive mean error")

    log_n = np.log(np.array(ns, dtype=np.float64))
    slope, intercept = np.polyfit(log_n, np.log(means), 1)

    rng = np.random.default_rng(seed)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        bm = np.array(
            [samples[n][rng.integers(0, samples[n].size, samples[n].size)].mean() for n in ns]
        )
        bm = np.maximum(bm, 1e-300)
        boot[b] = np.polyfit(log_n, np.log(bm), 1)[0]
    ci_low, ci_high = np.percentile(boot, [2.5, 97.5])

    return ConvergenceReport(
        ns=tuple(ns),
        mean_errors=tuple(float(m) for m in means),
        slope=float(slope),
        intercept=float(intercept),
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        monotone_decreasing=bool(np.all(np.diff(means) < 0.0)),
        n_boot=n_boot,
    )
