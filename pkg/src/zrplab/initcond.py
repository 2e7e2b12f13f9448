"""Equilibrium-perturbation initial data.

Profiles are trigonometric polynomials with integer wave vectors,

    rho0(u) = offset + sum_k a_k cos(2 pi k.u + theta_k),

which keeps the drift-orthogonality constraint (k.m = 0 per mode) exactly
checkable and the limiting heat equation solvable in closed form.  The
initial product measure places independent occupations at each site x with
local density rho* + N^{-alpha} rho0(x/N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import KernelError, ProfileAmplitudeError
from .lattice import Configuration, Torus
from .thermo import JumpKernel, ThermoFunctions

__all__ = [
    "TrigPolynomial",
    "PerturbationProfile",
    "InitialCondition",
    "OrthogonalityReport",
    "check_drift_orthogonal",
    "local_density_field",
    "sample_initial",
    "initial_entropy",
]


@dataclass(frozen=True)
class TrigPolynomial:
    """offset + sum of a_k cos(2 pi k.u + theta_k) with integer wave vectors."""

    modes: tuple = ()
    offset: float = 0.0

    def __post_init__(self):
        norm = []
        for k, amp, phase in self.modes:
            k = tuple(int(c) for c in k)
            if all(c == 0 for c in k):
                raise ValueError("zero wave vector: fold constants into the offset")
            norm.append((k, float(amp), float(phase)))
        object.__setattr__(self, "modes", tuple(norm))

    @property
    def d(self) -> int:
        return len(self.modes[0][0]) if self.modes else 0

    def __call__(self, u):
        """Evaluate at points u with shape (..., d) or a single point."""
        u = np.asarray(u, dtype=np.float64)
        scalar_point = u.ndim == 1
        pts = u.reshape(-1, u.shape[-1]) if u.ndim > 0 else u
        out = np.full(pts.shape[0], self.offset)
        for k, amp, phase in self.modes:
            out += amp * np.cos(2.0 * math.pi * pts @ np.asarray(k, dtype=np.float64) + phase)
        if scalar_point:
            return float(out[0])
        return out.reshape(u.shape[:-1])

    def lattice_field(self, torus: Torus) -> np.ndarray:
        """Values at the lattice points x/N, flat in site order."""
        pts = torus.lattice_points() / float(torus.N)
        return np.asarray(self(pts), dtype=np.float64).reshape(-1)

    def gradient(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        grad = np.zeros(u.shape[-1] if u.ndim else 0)
        for k, amp, phase in self.modes:
            kv = np.asarray(k, dtype=np.float64)
            grad = grad - amp * 2.0 * math.pi * np.sin(2.0 * math.pi * float(u @ kv) + phase) * kv
        return grad

    def shifted(self, v) -> "TrigPolynomial":
        """The translate u -> self(u + v)."""
        v = np.asarray(v, dtype=np.float64)
        return TrigPolynomial(
            tuple(
                (k, amp, phase + 2.0 * math.pi * float(np.dot(k, v)))
                for k, amp, phase in self.modes
            ),
            self.offset,
        )

    def scaled(self, factor: float) -> "TrigPolynomial":
        return TrigPolynomial(
            tuple((k, amp * factor, phase) for k, amp, phase in self.modes),
            self.offset * factor,
        )

    def damped(self, factors) -> "TrigPolynomial":
        """Per-mode amplitude factors (same order as self.modes)."""
        return TrigPolynomial(
            tuple(
                (k, amp * f, phase) for (k, amp, phase), f in zip(self.modes, factors)
            ),
            self.offset,
        )

    def l2_pairing(self, other: "TrigPolynomial") -> float:
        """Exact integral of self * other over the unit torus.

        Uses mode orthogonality: cosines with wave vectors k and k' pair up
        only when k' = k or k' = -k.
        """
        total = self.offset * other.offset
        for k, a, th in self.modes:
            for k2, a2, th2 in other.modes:
                if k2 == k:
                    total += 0.5 * a * a2 * math.cos(th - th2)
                elif k2 == tuple(-c for c in k):
                    total += 0.5 * a * a2 * math.cos(th + th2)
        return total

    def amplitude_bound(self) -> float:
        """sum |a_k|: |self(u) - offset| never exceeds this."""
        return sum(abs(amp) for _, amp, _ in self.modes)


# A perturbation profile is exactly a trigonometric polynomial.
PerturbationProfile = TrigPolynomial


@dataclass(frozen=True)
class InitialCondition:
    """Base density rho*, perturbation exponent alpha in (0,1), and profile."""

    rho_star: float
    alpha: float
    profile: TrigPolynomial = field(default_factory=TrigPolynomial)

    def __post_init__(self):
        if not self.rho_star > 0:
            raise ValueError("rho_star must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    def min_density_bound(self, N: int) -> float:
        """Lower bound of the local densities at scale N."""
        scale = N ** (-self.alpha)
        return self.rho_star + scale * (self.profile.offset - self.profile.amplitude_bound())


@dataclass(frozen=True)
class OrthogonalityReport:
    ok: bool
    per_mode: tuple  # (wave vector, exact k.m as Fraction, passes)

    def __bool__(self):
        return self.ok


def check_drift_orthogonal(profile: TrigPolynomial, kernel: JumpKernel) -> OrthogonalityReport:
    """Exact check that every mode satisfies k.m = 0 (constant along drift).

    Arithmetic is exact: the kernel carries rational drift components and
    wave vectors are integers.  Constant profiles pass for any kernel.
    """
    m = getattr(kernel, "drift_exact", None)
    if m is None:
        raise KernelError("kernel does not expose an exact rational drift")
    rows = []
    ok = True
    for k, _, _ in profile.modes:
        if len(k) != len(m):
            raise ValueError("mode dimension does not match kernel dimension")
        dot = sum(ki * mi for ki, mi in zip(k, m))
        passes = dot == 0
        ok = ok and passes
        rows.append((k, dot, passes))
    return OrthogonalityReport(ok, tuple(rows))


def local_density_field(torus: Torus, ic: InitialCondition) -> np.ndarray:
    """Per-site densities rho* + N^{-alpha} rho0(x/N).

    Single source of truth: the initial sampler, the entropy formula, and
    reference-measure evaluations all read these exact values.
    """
    scale = torus.N ** (-ic.alpha)
    if ic.profile.modes or ic.profile.offset:
        return ic.rho_star + scale * ic.profile.lattice_field(torus)
    return np.full(torus.n_sites, float(ic.rho_star))


def sample_initial(
    torus: Torus,
    ic: InitialCondition,
    thermo: ThermoFunctions,
    rng: np.random.Generator,
    tail_mass: float = 1e-12,
) -> Configuration:
    """Draw the product initial state: site x gets an independent occupation
    with fugacity Phi(rho* + N^{-alpha} rho0(x/N)), by inverse CDF on the
    truncated marginal pmf.

    One uniform is consumed per site in site order, so the stream layout is
    independent of how many distinct density values the profile takes.
    """
    densities = local_density_field(torus, ic)
    if densities.min() <= 0.0:
        raise ProfileAmplitudeError(
            f"profile drives the local density to {densities.min():.6g} <= 0 at N={torus.N}"
        )
    uniq, inverse = np.unique(densities, return_inverse=True)
    cdfs = []
    for rho in uniq:
        phi = thermo.fugacity_of_density(float(rho))
        pmf = thermo.marginal_distribution(phi, tail_mass=tail_mass)
        cdfs.append(np.cumsum(pmf))
    u = rng.random(torus.n_sites)
    occ = np.empty(torus.n_sites, dtype=np.int64)
    for gi, cdf in enumerate(cdfs):
        mask = inverse == gi
        occ[mask] = np.searchsorted(cdf, u[mask], side="right")
    return Configuration(torus, occ)


def initial_entropy(torus: Torus, ic: InitialCondition, thermo: ThermoFunctions) -> tuple:
    """Relative entropy of the perturbed product measure against the flat
    one at density rho*, in nats.  Returns (total, per_site).

    Product structure gives the closed form as a sum over sites of

        log[ Z(Phi(rho*)) / Z(Phi(rho_x)) ] + rho_x log[ Phi(rho_x) / Phi(rho*) ]

    with rho_x the local density at site x.  Sites with rho_x = rho*
    contribute exactly 0.
    """
    densities = local_density_field(torus, ic)
    uniq, counts = np.unique(densities, return_counts=True)
    log_z_star = thermo.log_partition_function(thermo.fugacity_of_density(ic.rho_star))
    phi_star = thermo.fugacity_of_density(ic.rho_star)
    total = 0.0
    for rho, count in zip(uniq, counts):
        rho = float(rho)
        if rho == ic.rho_star:
            continue
        phi = thermo.fugacity_of_density(rho)
        term = (log_z_star - thermo.log_partition_function(phi)) + rho * math.log(phi / phi_star)
        total += count * term
    return total, total / torus.n_sites
