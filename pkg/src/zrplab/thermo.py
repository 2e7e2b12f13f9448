"""Thermodynamics of the invariant product measures of the zero range process.

A site holding k particles ejects one at rate g(k).  The grand-canonical
product measure with fugacity phi has site marginals

    P_phi(k) = phi^k / (Z(phi) g(k)!),   g(k)! = g(1) g(2) ... g(k),  g(0)! = 1.

This module owns the rate function g and its admissibility checks, the jump
kernel p, the normalisation Z(phi), the density map R(phi) = E_phi[k] and its
inverse Phi = R^{-1}, occupation marginals, and the cumulant pair
(log-MGF Lambda, large-deviation rate I).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    DegenerateRateError,
    DensityUnreachableError,
    KernelError,
    RateTableExhaustedError,
    SeriesDivergenceError,
)

__all__ = [
    "RateFunction",
    "RateValidationReport",
    "JumpKernel",
    "ThermoFunctions",
    "validate_rate_function",
    "poisson_reference",
    "poisson_rate_I",
    "geometric_reference",
]


def _rate_linear(k: int) -> float:
    return float(k)


def _rate_indicator(k: int) -> float:
    return 1.0 if k >= 1 else 0.0


class RateFunction:
    """Jump rate g: N -> R+ with g(0) = 0 and g(k) > 0 for k >= 1.

    Backed either by a closed-form rule or a finite table.  ``form`` tags the
    two canonical rates ("linear" for g(k)=k, "indicator" for g(k)=1{k>=1})
    so thermodynamic evaluators can take exact closed-form shortcuts.
    """

    def __init__(self, rule=None, values=None, form=None, name="g"):
        if rule is None and values is None:
            raise DegenerateRateError("rate function needs a rule or a value table")
        self.name = name
        self.form = form
        self._rule = rule
        if values is not None:
            table = np.asarray(values, dtype=np.float64)
            if table.size == 0:
                raise DegenerateRateError("empty rate table")
            self._check_values(table)
            self._table = table
        else:
            self._table = np.array([rule(0)], dtype=np.float64)
            if self._table[0] != 0.0:
                raise DegenerateRateError("g(0) must be 0")

    @staticmethod
    def _check_values(table):
        if not np.all(np.isfinite(table)):
            raise DegenerateRateError("rate values must be finite")
        if np.any(table < 0):
            raise DegenerateRateError("rate values must be nonnegative")
        if table[0] != 0.0:
            raise DegenerateRateError("g(0) must be 0")
        if table.size > 1 and np.any(table[1:] == 0.0):
            k = 1 + int(np.argmin(table[1:]))
            raise DegenerateRateError(f"g({k}) = 0 but k >= 1 (degenerate rate)")

    @classmethod
    def linear(cls):
        """g(k) = k (independent-walker rate; Poisson marginals)."""
        return cls(rule=_rate_linear, form="linear", name="g(k)=k")

    @classmethod
    def indicator(cls):
        """g(k) = 1 for k >= 1 (constant rate; geometric marginals)."""
        return cls(rule=_rate_indicator, form="indicator", name="g(k)=1{k>=1}")

    @classmethod
    def from_table(cls, values, name="g[table]"):
        return cls(values=values, name=name)

    @classmethod
    def from_rule(cls, fn, name="g[rule]"):
        return cls(rule=fn, name=name)

    @property
    def tabulated_max(self):
        """Largest k with a stored value; None means extendable by rule."""
        return None if self._rule is not None else self._table.size - 1

    def table(self, kmax: int) -> np.ndarray:
        """Values g(0..kmax), extending by the rule when one is available."""
        if kmax < self._table.size:
            return self._table[: kmax + 1]
        if self._rule is None:
            raise RateTableExhaustedError(
                f"rate table ends at k={self._table.size - 1}, need k={kmax}"
            )
        ext = np.array([self._rule(k) for k in range(self._table.size, kmax + 1)])
        table = np.concatenate([self._table, ext])
        self._check_values(table)
        self._table = table
        return self._table

    def __call__(self, k: int) -> float:
        if k < 0:
            raise ValueError("occupation number must be nonnegative")
        return float(self.table(k)[k])

    def __repr__(self):
        return f"RateFunction({self.name!r})"

    def __reduce__(self):
        if self.form == "linear":
            return (RateFunction.linear, ())
        if self.form == "indicator":
            return (RateFunction.indicator, ())
        if self._rule is not None:
            return (RateFunction, (self._rule, None, self.form, self.name))
        return (RateFunction, (None, self._table, self.form, self.name))


@dataclass(frozen=True)
class RateValidationReport:
    """Window-limited certificate for the two admissibility conditions.

    Condition (i): increments |g(k+1)-g(k)| bounded by a constant a0.
    Condition (ii): g(k) - g(j) > a1 > 0 whenever k >= j + k0 (uniform gap).

    Both are certified only on the scanned window; ``notes`` records the
    heuristics used for the unboundedness flag.
    """

    window: int
    a0: float
    increments_bounded: bool
    gap_holds: bool
    k0: int | None
    a1: float | None
    gap_witness: tuple | None
    violations: tuple
    notes: str

    @property
    def ok(self) -> bool:
        return self.increments_bounded and self.gap_holds


def validate_rate_function(g, window: int) -> RateValidationReport:
    """Scan g(0..window) for bounded increments and the uniform-gap condition.

    ``g`` may be a RateFunction or a value table.  The input is never
    mutated.  Increment unboundedness on a finite window is necessarily a
    heuristic: we flag it when the largest increment sits at the window end
    and strictly exceeds the mid-window increment (monotone growth pattern).
    """
    if isinstance(g, RateFunction):
        values = np.array(g.table(window), dtype=np.float64, copy=True)
    else:
        values = np.asarray(g, dtype=np.float64)
        if values.size == 0:
            raise DegenerateRateError("empty rate table")
        if window > values.size - 1:
            raise ValueError(f"window {window} exceeds table length {values.size - 1}")
        values = values[: window + 1].copy()
    RateFunction._check_values(values)

    inc = np.abs(np.diff(values))
    a0 = float(inc.max())
    mid = inc.size // 2
    unbounded = bool(inc[-1] == a0 and inc[-1] > inc[mid])
    notes = []
    if unbounded:
        notes.append(
            "largest increment sits at the window end and grew over the "
            "second half; increments look unbounded"
        )

    # gap condition: d_ge(L) = min over pairs (j, k) with k - j >= L of g(k)-g(j).
    # Certified lags are capped at window/2 so the pair set stays representative
    # (a lag near the window length is witnessed by a handful of pairs and
    # would pass vacuously for constant rates).
    prefix_max = np.maximum.accumulate(values)
    w = values.size - 1
    d_exact = np.empty(w + 1)
    d_exact[0] = -np.inf
    argpairs = [None] * (w + 1)
    for lag in range(1, w + 1):
        diffs = values[lag:] - prefix_max[: w + 1 - lag]
        i = int(np.argmin(diffs))
        d_exact[lag] = diffs[i]
        jstar = int(np.argmax(values[: i + 1]))
        argpairs[lag] = (jstar, i + lag)
    d_ge = np.minimum.accumulate(d_exact[::-1])[::-1]  # suffix minima
    lag_cap = max(1, w // 2)

    gap_holds = bool(d_ge[1 : lag_cap + 1].max() > 0.0)
    k0 = a1 = witness = None
    violations: tuple = ()
    if gap_holds:
        base = d_ge[1]
        if base > 0.0:
            better = np.nonzero(d_ge[: lag_cap + 1] > base)[0]
            better = better[better >= 1]
            if better.size:
                k0 = int(better[0])
                a1 = float(base)
            else:
                k0 = 1
                a1 = float(base) / 2.0
        else:
            k0 = int(np.nonzero(d_ge[1 : lag_cap + 1] > 0.0)[0][0] + 1)
            a1 = float(d_ge[k0]) / 2.0
        witness = argpairs[k0] + (float(d_ge[k0]),)
    else:
        violations = (argpairs[lag_cap] + (float(d_ge[lag_cap]),),)
        if np.all(values[1:] == values[1]):
            notes.append("gap condition fails: rate is constant on k >= 1")
        else:
            notes.append("gap condition fails on the window")

    return RateValidationReport(
        window=window,
        a0=a0,
        increments_bounded=not unbounded,
        gap_holds=gap_holds,
        k0=k0,
        a1=a1,
        gap_witness=witness,
        violations=violations,
        notes="; ".join(notes),
    )


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x)  # exact binary value
    raise KernelError(f"probability {x!r} is not an exact rational quantity")


class JumpKernel:
    """Finite-range single-particle jump law p on Z^d with nonzero drift.

    Probabilities are kept as exact rationals (floats convert exactly via
    their binary value) so the drift m = sum x p(x) supports exact
    orthogonality checks.  Requirements: p(0) = 0, probabilities
    nonnegative summing to 1, and m != 0.
    """

    def __init__(self, support):
        if isinstance(support, dict):
            items = list(support.items())
        else:
            items = list(support)
        if not items:
            raise KernelError("empty kernel support")

        disps = []
        probs = []
        for disp, p in items:
            disp = tuple(int(c) for c in disp)
            p = _as_fraction(p)
            if p < 0:
                raise KernelError(f"negative probability for displacement {disp}")
            if p == 0:
                continue
            if all(c == 0 for c in disp):
                raise KernelError("p(0) must be 0 (self jumps are null events)")
            disps.append(disp)
            probs.append(p)
        if not disps:
            raise KernelError("kernel support carries no positive probability")

        d = len(disps[0])
        if any(len(x) != d for x in disps):
            raise KernelError("displacements have inconsistent dimensions")
        if len(set(disps)) != len(disps):
            raise KernelError("duplicate displacement in kernel support")

        total = sum(probs)
        if total != 1:
            if abs(float(total) - 1.0) > 1e-9:
                raise KernelError(f"probabilities sum to {float(total)}, not 1")
            probs = [p / total for p in probs]

        self.d = d
        self.displacements = tuple(disps)
        self.probs_exact = tuple(probs)
        self.probabilities = np.array([float(p) for p in probs])
        self.range = max(max(abs(c) for c in x) for x in disps)

        self.drift_exact = tuple(
            sum((Fraction(x[i]) * p for x, p in zip(disps, probs)), Fraction(0))
            for i in range(d)
        )
        if all(m == 0 for m in self.drift_exact):
            raise KernelError("kernel is symmetric (zero drift m); model requires m != 0")
        self.drift = np.array([float(m) for m in self.drift_exact])

        sigma = np.zeros((d, d))
        for x, p in zip(disps, self.probabilities):
            sigma += np.outer(x, x) * p
        self.sigma = (sigma + sigma.T) / 2.0
        if np.linalg.eigvalsh(self.sigma).min() < -1e-12:
            raise KernelError("second-moment matrix is not positive semi-definite")

    def symmetrization(self) -> dict:
        """s(x) = [p(x) + p(-x)] / 2 as exact rationals, zero entries dropped."""
        p = dict(zip(self.displacements, self.probs_exact))
        out = {}
        for x in set(p) | {tuple(-c for c in x) for x in p}:
            sx = (p.get(x, Fraction(0)) + p.get(tuple(-c for c in x), Fraction(0))) / 2
            if sx > 0:
                out[x] = sx
        return out

    def reversed(self) -> "JumpKernel":
        """The adjoint dynamics' kernel p(-.)."""
        return JumpKernel(
            [(tuple(-c for c in x), p) for x, p in zip(self.displacements, self.probs_exact)]
        )

    def __repr__(self):
        terms = ", ".join(f"{x}:{p}" for x, p in zip(self.displacements, self.probs_exact))
        return f"JumpKernel({terms})"


# hard caps for the fugacity series and the bracketing search
_K_MAX = 100_000
_TERM_CAP = 1e280
_PHI_CAP = 1e12


class ThermoFunctions:
    """Cached evaluators (Z, R, Phi, Phi', Phi'', Lambda, I) for one rate g.

    All methods are pure; caches are plain dicts written once per key, safe
    for concurrent readers under the GIL.  With ``use_closed_forms=True``
    (default) the two canonical rates take exact analytic shortcuts for
    Z/R/Phi; pass False to force the generic series + root-finding path,
    which is what the closed forms are tested against.
    """

    def __init__(self, rate: RateFunction, tol: float = 1e-12, use_closed_forms: bool = True):
        if not isinstance(rate, RateFunction):
            rate = RateFunction.from_table(rate)
        self.rate = rate
        self.tol = float(tol)
        self.closed_form = rate.form if use_closed_forms else None
        self._series_cache: dict = {}
        self._phi_cache: dict = {}
        self._k_of_phi: dict = {}

    # ---------------------------------------------------------------- series

    def _series(self, phi: float, tol: float):
        """Accumulate S0 = sum t_k, S1 = sum k t_k, S2 = sum k^2 t_k with
        t_k = phi^k / g(k)!, stopping after 10 consecutive terms of relative
        size < tol.  Returns (S0, S1, S2, K)."""
        key = (phi, tol)
        hit = self._series_cache.get(key)
        if hit is not None:
            return hit
        if phi < 0:
            raise ValueError("fugacity must be nonnegative")
        if phi == 0.0:
            out = (1.0, 0.0, 0.0, 0)
            self._series_cache[key] = out
            return out

        tabulated_max = self.rate.tabulated_max
        s0 = 1.0
        s1 = 0.0
        s2 = 0.0
        t = 1.0
        small = 0
        k = 0
        table = self.rate.table(min(_K_MAX, 1024) if tabulated_max is None else tabulated_max)
        while small < 10:
            k += 1
            if k > _K_MAX:
                raise SeriesDivergenceError(
                    f"fugacity series for phi={phi} exceeded {_K_MAX} terms"
                )
            if k >= table.size:
                if tabulated_max is not None:
                    raise RateTableExhaustedError(
                        f"series at phi={phi} needs g({k}) beyond the table"
                    )
                table = self.rate.table(2 * table.size)
            t *= phi / table[k]
            if t > _TERM_CAP:
                raise SeriesDivergenceError(
                    f"fugacity series terms blow up at phi={phi} (outside radius)"
                )
            s0 += t
            s1 += k * t
            s2 += k * k * t
            small = small + 1 if t < tol * s0 else 0
        if len(self._series_cache) > 65536:
            self._series_cache.clear()
        out = (s0, s1, s2, k)
        self._series_cache[key] = out
        return out

    def truncation_index(self, phi: float):
        """Series truncation K(phi) of the last generic evaluation (None if a
        closed form answered)."""
        return self._k_of_phi.get(phi)

    # ------------------------------------------------------------ evaluators

    def partition_function(self, phi: float, tol: float | None = None) -> float:
        """Z(phi) = sum_k phi^k / g(k)!."""
        if phi < 0:
            raise ValueError("fugacity must be nonnegative")
        if self.closed_form == "linear":
            return math.exp(phi)
        if self.closed_form == "indicator":
            if phi >= 1.0:
                raise SeriesDivergenceError(f"phi={phi} outside radius 1 for the constant rate")
            return 1.0 / (1.0 - phi)
        s0, _, _, k = self._series(phi, self.tol if tol is None else tol)
        self._k_of_phi[phi] = k
        return s0

    def log_partition_function(self, phi: float) -> float:
        """log Z(phi); overflow-safe for the linear closed form."""
        if self.closed_form == "linear":
            return phi
        if self.closed_form == "indicator":
            if phi >= 1.0:
                raise SeriesDivergenceError(f"phi={phi} outside radius 1 for the constant rate")
            return -math.log1p(-phi)
        return math.log(self.partition_function(phi))

    def density_of_fugacity(self, phi: float) -> float:
        """R(phi) = E_phi[k], strictly increasing in phi."""
        if phi < 0:
            raise ValueError("fugacity must be nonnegative")
        if self.closed_form == "linear":
            return phi
        if self.closed_form == "indicator":
            if phi >= 1.0:
                raise SeriesDivergenceError(f"phi={phi} outside radius 1 for the constant rate")
            return phi / (1.0 - phi)
        s0, s1, _, _ = self._series(phi, self.tol)
        return s1 / s0

    def occupation_variance(self, phi: float) -> float:
        """Var_phi(k); equals phi R'(phi)."""
        if self.closed_form == "linear":
            return phi
        if self.closed_form == "indicator":
            return phi / (1.0 - phi) ** 2
        s0, s1, s2, _ = self._series(phi, self.tol)
        mean = s1 / s0
        return s2 / s0 - mean * mean

    def fugacity_of_density(self, rho: float, tol: float | None = None) -> float:
        """Phi(rho) = R^{-1}(rho), by monotone bracketing; Phi(0) = 0."""
        if rho < 0:
            raise ValueError("density must be nonnegative")
        if rho == 0.0:
            return 0.0
        if self.closed_form == "linear":
            return rho
        if self.closed_form == "indicator":
            return rho / (1.0 + rho)
        tol = self.tol if tol is None else tol
        hit = self._phi_cache.get((rho, tol))
        if hit is not None:
            return hit

        lo, hi = 0.0, max(rho, 1e-3)
        cap = None  # smallest fugacity seen to diverge
        while True:
            try:
                r_hi = self.density_of_fugacity(hi)
            except SeriesDivergenceError:
                cap = hi
                hi = 0.5 * (lo + cap)
                if cap - lo < 1e-14 * max(1.0, cap):
                    raise DensityUnreachableError(
                        f"density {rho} not reachable below the convergence radius"
                    ) from None
                continue
            if r_hi >= rho:
                break
            lo = hi
            if cap is None:
                hi = 2.0 * hi
                if hi > _PHI_CAP:
                    raise DensityUnreachableError(
                        f"density {rho} not reached at fugacity cap {_PHI_CAP:g}"
                    )
            else:
                hi = 0.5 * (lo + cap)
                if cap - lo < 1e-14 * max(1.0, cap):
                    raise DensityUnreachableError(
                        f"density {rho} not reachable below the convergence radius"
                    )

        from scipy.optimize import brentq

        phi = brentq(
            lambda f: self.density_of_fugacity(f) - rho, lo, hi, xtol=1e-300, rtol=8.9e-16
        )
        achieved = self.density_of_fugacity(phi)
        if abs(achieved - rho) > tol * max(1.0, rho):
            raise DensityUnreachableError(
                f"root finding stalled: |R(Phi(rho)) - rho| = {abs(achieved - rho):.3e}"
            )
        if len(self._phi_cache) > 65536:
            self._phi_cache.clear()
        self._phi_cache[(rho, tol)] = phi
        return phi

    def phi_derivatives(self, rho: float) -> tuple:
        """(Phi'(rho), Phi''(rho)).

        Phi' comes from the variance identity R'(phi) = Var_phi(k)/phi, so
        Phi'(rho) = Phi(rho) / Var(k).  Phi'' is a centred finite difference
        of Phi' with step h = 1e-4 * max(1, rho).
        """
        if rho <= 0:
            raise ValueError("phi_derivatives needs rho > 0")
        if self.closed_form == "linear":
            return 1.0, 0.0
        if self.closed_form == "indicator":
            return 1.0 / (1.0 + rho) ** 2, -2.0 / (1.0 + rho) ** 3

        def dphi(r):
            phi = self.fugacity_of_density(r)
            var = self.occupation_variance(phi)
            if var <= 0:
                raise RuntimeError("occupation variance vanished for a nondegenerate rate")
            return phi / var

        h = 1e-4 * max(1.0, rho)
        if rho - h <= 0:
            h = rho / 2.0
        second = (dphi(rho + h) - dphi(rho - h)) / (2.0 * h)
        return dphi(rho), second

    def marginal_distribution(self, phi: float, tail_mass: float = 1e-12) -> np.ndarray:
        """Truncated occupation pmf, keeping mass >= 1 - tail_mass."""
        z = self.partition_function(phi)
        if phi == 0.0:
            return np.array([1.0])
        tabulated_max = self.rate.tabulated_max
        table = self.rate.table(min(_K_MAX, 1024) if tabulated_max is None else tabulated_max)
        pmf = [1.0 / z]
        t = 1.0 / z
        acc = t
        k = 0
        while acc < 1.0 - tail_mass:
            k += 1
            if k > _K_MAX:
                raise SeriesDivergenceError("pmf truncation exceeded the term cap")
            if k >= table.size:
                if tabulated_max is not None:
                    raise RateTableExhaustedError(
                        f"pmf at phi={phi} needs g({k}) beyond the table"
                    )
                table = self.rate.table(2 * table.size)
            t *= phi / table[k]
            pmf.append(t)
            acc += t
        return np.array(pmf)

    # ------------------------------------------------- cumulants / deviations

    def log_mgf(self, lam: float, phi: float) -> float:
        """Lambda(lam) = log E_phi[e^{lam k}] = log Z(phi e^lam) - log Z(phi)."""
        return self.log_partition_function(phi * math.exp(lam)) - self.log_partition_function(phi)

    def ld_rate(self, theta: float, phi: float) -> float:
        """I(theta) = sup_lam { lam theta - Lambda(lam) }, by golden section.

        Returns math.inf when the supremum diverges within the fugacity cap
        (theta not reachable by exponential tilting).
        """
        if theta < 0:
            raise ValueError("ld_rate needs theta >= 0")

        lam_lo = -46.0  # phi e^lam ~ 1e-20: Lambda indistinguishable from its limit

        def objective(lam):
            return lam * theta - self.log_mgf(lam, phi)

        # The objective is concave with derivative theta - R(phi e^lam); a
        # valid upper end of the search bracket is any lam with R > theta.
        hi = 1.0
        while True:
            try:
                if self.density_of_fugacity(phi * math.exp(hi)) > theta:
                    break
                diverged = False
            except SeriesDivergenceError:
                diverged = True
            if diverged:
                # bisect toward the convergence radius looking for R > theta
                lo_edge, cap, found = 0.0, hi, False
                while cap - lo_edge > 1e-13 * max(1.0, cap):
                    mid = 0.5 * (lo_edge + cap)
                    try:
                        r = self.density_of_fugacity(phi * math.exp(mid))
                    except SeriesDivergenceError:
                        cap = mid
                        continue
                    if r > theta:
                        hi, found = mid, True
                        break
                    lo_edge = mid
                if not found:
                    return math.inf  # theta unreachable by exponential tilting
                break
            hi *= 2.0
            if phi * math.exp(hi) > _PHI_CAP:
                return math.inf

        # golden-section maximisation of a concave function on [lam_lo, hi]
        invphi = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = lam_lo, hi
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc, fd = objective(c), objective(d)
        while b - a > 1e-10:
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - invphi * (b - a)
                fc = objective(c)
            else:
                a, c, fc = c, d, fd
                d = a + invphi * (b - a)
                fd = objective(d)
        best = max(fc, fd, objective(0.0))
        return max(best, 0.0)

    def cumulants(self, phi: float, lam: float, theta: float) -> tuple:
        """(Lambda(lam), I(theta)) at fugacity phi."""
        return self.log_mgf(lam, phi), self.ld_rate(theta, phi)


# ----------------------------------------------------------- analytic oracles
#
# Closed forms for the two canonical rates, kept separate from the evaluators
# so tests can compare the generic series machinery against them.


def poisson_reference(rho: float) -> dict:
    """Exact thermodynamics of g(k)=k at density rho (Poisson marginals)."""
    return {
        "phi": rho,
        "Z": math.exp(rho),
        "phi_prime": 1.0,
        "phi_double_prime": 0.0,
    }


def poisson_rate_I(theta: float, rho: float) -> float:
    """Large-deviation rate of a Poisson(rho) site: theta log(theta/rho) - theta + rho."""
    if theta == 0.0:
        return rho
    return theta * math.log(theta / rho) - theta + rho


def geometric_reference(rho: float) -> dict:
    """Exact thermodynamics of g(k)=1{k>=1} at density rho (geometric marginals)."""
    phi = rho / (1.0 + rho)
    return {
        "phi": phi,
        "Z": 1.0 + rho,
        "phi_prime": 1.0 / (1.0 + rho) ** 2,
        "phi_double_prime": -2.0 / (1.0 + rho) ** 3,
    }
