"""Exact finite-block machinery: canonical measures, symmetrised generator
spectra, equivalence of ensembles, canonical variances, log-Sobolev ratio
scans, and exact tail probabilities.

Blocks here are non-periodic: jumps that would leave the block are
suppressed, matching the localised symmetric generator the gap and
log-Sobolev bounds refer to.  The canonical measure on {total = j} weights
a state by prod_x 1/g(eta(x))! and does not involve any density parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    CutoffError,
    DisconnectedSpaceError,
    EnumerationCapError,
    NotATailError,
)
from .thermo import JumpKernel, RateFunction, ThermoFunctions

__all__ = [
    "CanonicalSpace",
    "GapResult",
    "VarianceResult",
    "LsiScanResult",
    "TailResult",
    "chain_sites",
    "cube_sites",
    "enumerate_canonical",
    "canonical_expectation",
    "site_marginal",
    "build_symmetric_generator",
    "detailed_balance_residual",
    "spectral_gap",
    "canonical_variance",
    "equivalence_gap",
    "lsi_ratio_scan",
    "tail_probability_exact",
    "conditioned_site_marginal",
]

ENUMERATION_CAP = 2_000_000
DENSE_EIGEN_CAP = 4_000


def chain_sites(n: int) -> np.ndarray:
    """Coordinates of a 1d segment of n sites (the d=1 scan geometry)."""
    return np.arange(n, dtype=np.int64).reshape(-1, 1)


def cube_sites(ell: int, d: int) -> np.ndarray:
    """Coordinates of the cube {-ell..ell}^d, (2*ell+1)^d sites."""
    axes = [np.arange(-ell, ell + 1)] * d
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1).astype(np.int64)


def _compositions(n: int, j: int) -> np.ndarray:
    """All weak compositions of j into n parts, one per row."""
    count = math.comb(j + n - 1, j)
    out = np.zeros((count, n), dtype=np.int64)
    state = np.zeros(n, dtype=np.int64)
    row = 0

    def fill(pos, remaining):
        nonlocal row
        if pos == n - 1:
            state[pos] = remaining
            out[row] = state
            row += 1
            return
        for v in range(remaining + 1):
            state[pos] = v
            fill(pos + 1, remaining - v)

    fill(0, j)
    return out


@dataclass
class CanonicalSpace:
    """Exhaustive state space of j particles on a finite block.

    ``weights`` is the canonical measure: it depends only on the rate
    function (structurally there is no density parameter here).
    """

    coords: np.ndarray  # (n_sites, d)
    j: int
    states: np.ndarray  # (n_states, n_sites)
    weights: np.ndarray  # (n_states,) summing to 1
    g_values: np.ndarray  # g(0..j)

    @property
    def n_sites(self) -> int:
        return self.coords.shape[0]

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    def state_index(self) -> dict:
        return {self.states[i].tobytes(): i for i in range(self.n_states)}


def enumerate_canonical(sites, j: int, rate: RateFunction, cap: int = ENUMERATION_CAP) -> CanonicalSpace:
    """Enumerate the canonical measure on a block.

    ``sites`` is a coordinate array (see chain_sites / cube_sites) or an
    integer, read as a 1d segment.  States are weighted by
    prod_x 1/g(eta(x))!, normalised.
    """
    coords = chain_sites(sites) if isinstance(sites, (int, np.integer)) else np.asarray(sites)
    n = coords.shape[0]
    if j < 0:
        raise ValueError("particle count must be nonnegative")
    count = math.comb(j + n - 1, j)
    if count > cap:
        raise EnumerationCapError(f"state count {count} exceeds the cap {cap}")
    states = _compositions(n, j)

    g = rate.table(max(j, 1)).astype(np.float64)
    log_gf = np.concatenate([[0.0], np.cumsum(np.log(g[1 : j + 1]))]) if j > 0 else np.zeros(1)
    log_w = -log_gf[states].sum(axis=1)
    log_w -= log_w.max()
    w = np.exp(log_w)
    w /= w.sum()
    return CanonicalSpace(coords=coords, j=j, states=states, weights=w, g_values=g[: j + 1])


def canonical_expectation(space: CanonicalSpace, observable) -> float:
    """E[observable] under the canonical weights; ``observable`` is a
    per-state array or a callable on occupation vectors."""
    if callable(observable):
        values = np.array([observable(s) for s in space.states], dtype=np.float64)
    else:
        values = np.asarray(observable, dtype=np.float64)
        if values.shape != (space.n_states,):
            raise ValueError("observable must assign one value per state")
    return float(np.dot(space.weights, values))


def site_marginal(space: CanonicalSpace, site: int = 0) -> np.ndarray:
    """pmf of eta(site) under the canonical measure (length j+1)."""
    pmf = np.zeros(space.j + 1)
    np.add.at(pmf, space.states[:, site], space.weights)
    return pmf


def _symmetrization_dict(s) -> dict:
    if isinstance(s, JumpKernel):
        s = s.symmetrization()
    out = {}
    for disp, val in s.items():
        val = float(val) if isinstance(val, Fraction) else float(val)
        if val < 0:
            raise ValueError("symmetrised rates must be nonnegative")
        if val > 0:
            out[tuple(int(c) for c in disp)] = val
    if not out:
        raise ValueError("empty symmetrisation")
    return out


def build_symmetric_generator(space: CanonicalSpace, s):
    """Sparse generator of the symmetrised block dynamics on the state space.

    A particle at block site a jumps to a + z at rate g(eta(a)) s(z); the
    move is suppressed when a + z falls outside the block.  Returns
    (L, transitions) with L the sparse generator (row sums zero) and
    transitions = (src_state, dst_state, rate) arrays for Dirichlet forms.
    """
    s = _symmetrization_dict(s)
    coords = space.coords
    n, d = coords.shape
    site_of = {tuple(c): i for i, c in enumerate(coords.tolist())}
    disp_target = np.full((len(s), n), -1, dtype=np.int64)
    disp_rate = np.empty(len(s))
    for k, (z, sz) in enumerate(sorted(s.items())):
        disp_rate[k] = sz
        for a in range(n):
            tgt = tuple(coords[a] + np.asarray(z))
            disp_target[k, a] = site_of.get(tgt, -1)

    index = space.state_index()
    rows, cols, vals = [], [], []
    for i in range(space.n_states):
        state = space.states[i]
        for a in range(n):
            k_a = state[a]
            if k_a == 0:
                continue
            g_rate = space.g_values[k_a]
            for z in range(disp_target.shape[0]):
                b = disp_target[z, a]
                if b < 0:
                    continue
                new = state.copy()
                new[a] -= 1
                new[b] += 1
                i2 = index[new.tobytes()]
                rows.append(i)
                cols.append(i2)
                vals.append(g_rate * disp_rate[z])

    m = space.n_states
    rate_matrix = sp.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()
    diag = np.asarray(rate_matrix.sum(axis=1)).reshape(-1)
    generator = rate_matrix - sp.diags(diag)
    transitions = (np.array(rows), np.array(cols), np.array(vals))
    return generator, transitions


def detailed_balance_residual(space: CanonicalSpace, s) -> float:
    """max |w_i r(i->i') - w_i' r(i'->i)| over all transitions: exact
    reversibility of the symmetrised dynamics under the canonical weights."""
    generator, (rows, cols, vals) = build_symmetric_generator(space, s)
    flow = space.weights[rows] * vals
    reverse = {}
    for r, c, f in zip(rows, cols, flow):
        reverse[(int(r), int(c))] = reverse.get((int(r), int(c)), 0.0) + f
    residual = 0.0
    for (r, c), f in reverse.items():
        residual = max(residual, abs(f - reverse.get((c, r), 0.0)))
    return residual


@dataclass(frozen=True)
class GapResult:
    gap: float | None
    kappa: float | None
    n_states: int
    method: str
    degenerate: bool = False


def spectral_gap(space: CanonicalSpace, s, dense_cap: int = DENSE_EIGEN_CAP) -> GapResult:
    """Smallest nonzero eigenvalue of the negative symmetrised generator in
    the canonical inner product.

    One-point spaces (j = 0 or a single state) return a degenerate marker.
    Dense symmetric diagonalisation below ``dense_cap`` states, otherwise a
    sparse shift-invert eigensolve near zero.
    """
    if space.n_states <= 1:
        return GapResult(None, None, space.n_states, "none", degenerate=True)
    generator, (rows, cols, vals) = build_symmetric_generator(space, s)

    adjacency = sp.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(space.n_states,) * 2
    ).tocsr()
    n_comp, _ = sp.csgraph.connected_components(adjacency, directed=False)
    if n_comp != 1:
        raise DisconnectedSpaceError(
            f"canonical state graph has {n_comp} components under this kernel"
        )

    # similarity transform to a symmetric operator: S = D^{1/2} (-L) D^{-1/2}
    w = space.weights
    scale = np.sqrt(w)
    off = sp.coo_matrix(
        (-np.array(vals) * scale[rows] / scale[cols], (rows, cols)),
        shape=generator.shape,
    ).tocsr()
    diag = sp.diags(-generator.diagonal())
    sym = diag - (-off)
    sym = (sym + sym.T) * 0.5

    if space.n_states <= dense_cap:
        eigs = np.linalg.eigvalsh(sym.toarray())
        method = "dense"
    else:
        eigs = np.sort(spla.eigsh(sym, k=2, sigma=-1e-9, which="LM")[0])
        method = "sparse-shift-invert"
    if abs(eigs[0]) > 1e-8 * max(1.0, abs(eigs[-1])):
        raise RuntimeError(f"ground eigenvalue {eigs[0]:.3e} is not numerically zero")
    gap = float(eigs[1])
    return GapResult(gap=gap, kappa=1.0 / gap, n_states=space.n_states, method=method)


@dataclass(frozen=True)
class VarianceResult:
    variance: float
    n_times_variance: float
    site_rate_expectation: float
    j: int
    n_sites: int


def canonical_variance(space: CanonicalSpace, M: float) -> VarianceResult:
    """Variance of the centred, cut-off block-averaged rate.

    The observable averages g over the whole block and subtracts the
    canonical expectation of g at one site; the density cutoff indicator
    1{block density <= M} must be identically 1, which is exactly the
    precondition j <= M * n_sites.  Deviations are accumulated against the
    first state's value, so a constant observable gives exactly 0.
    """
    if space.j > M * space.n_sites:
        raise CutoffError(
            f"cutoff M={M} is inconsistent: j={space.j} > M * n_sites = {M * space.n_sites}"
        )
    block_mean = space.g_values[space.states].mean(axis=1)
    base = block_mean[0]
    dv = block_mean - base
    mean_dv = float(np.dot(space.weights, dv))
    variance = float(np.dot(space.weights, (dv - mean_dv) ** 2))
    e_site = float(np.dot(space.weights, space.g_values[space.states[:, 0]]))
    return VarianceResult(
        variance=variance,
        n_times_variance=space.n_sites * variance,
        site_rate_expectation=e_site,
        j=space.j,
        n_sites=space.n_sites,
    )


def equivalence_gap(space: CanonicalSpace, thermo: ThermoFunctions) -> float:
    """E_canonical[g(eta(0))] - Phi(j / n_sites): the finite-block error of
    replacing the canonical rate expectation by the grand-canonical one."""
    e_site = float(np.dot(space.weights, space.g_values[space.states[:, 0]]))
    return e_site - thermo.fugacity_of_density(space.j / space.n_sites)


@dataclass(frozen=True)
class LsiScanResult:
    lower_bound: float
    best_kind: str
    trials: int


def lsi_ratio_scan(
    space: CanonicalSpace,
    s,
    trials: int,
    rng: np.random.Generator,
    dense_cap: int = DENSE_EIGEN_CAP,
) -> LsiScanResult:
    """Lower bound for the log-Sobolev constant: max over trial functions of
    Ent(f^2) / D(f) with E[f^2] = 1.

    Trials combine random vectors with structured candidates built from the
    lowest eigenvectors of the symmetrised generator.  The scan is a lower
    bound by construction and is monotone in the trial count for a fixed
    stream.
    """
    if space.n_states <= 1 or trials < 1:
        return LsiScanResult(0.0, "degenerate", trials)
    generator, (rows, cols, vals) = build_symmetric_generator(space, s)
    w = space.weights
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    vals = np.asarray(vals)

    def ratio(f):
        norm2 = float(np.dot(w, f * f))
        if norm2 <= 0:
            return 0.0
        f = f / math.sqrt(norm2)
        f2 = f * f
        with np.errstate(divide="ignore", invalid="ignore"):
            ent_terms = np.where(f2 > 0, f2 * np.log(f2), 0.0)
        entropy = max(float(np.dot(w, ent_terms)), 0.0)
        dirichlet = 0.5 * float(np.dot(w[rows] * vals, (f[cols] - f[rows]) ** 2))
        if dirichlet <= 1e-300:
            return 0.0
        return entropy / dirichlet

    best = 0.0
    best_kind = "none"

    if space.n_states <= dense_cap:
        scale = np.sqrt(w)
        off = sp.coo_matrix(
            (-vals * scale[rows] / scale[cols], (rows, cols)), shape=generator.shape
        ).tocsr()
        sym = sp.diags(-generator.diagonal()) - (-off)
        sym = ((sym + sym.T) * 0.5).toarray()
        eigvals, eigvecs = np.linalg.eigh(sym)
        n_vec = min(4, space.n_states - 1)
        for k in range(1, 1 + n_vec):
            f = eigvecs[:, k] / scale
            f = f / np.abs(f).max()
            for candidate, kind in (
                (f, f"eigvec{k}"),
                *(((1.0 + eps * f), f"tilt{k}:{eps}") for eps in (0.25, 0.5, 1.0, 2.0)),
                *((np.exp(c * f), f"exp{k}:{c}") for c in (0.5, 1.0)),
            ):
                r = ratio(candidate.copy())
                if r > best:
                    best, best_kind = r, kind

    for i in range(trials):
        f = rng.standard_normal(space.n_states)
        r = ratio(f)
        if r > best:
            best, best_kind = r, f"random{i}"
    return LsiScanResult(best, best_kind, trials)


@dataclass(frozen=True)
class TailResult:
    p_tail: float
    threshold_count: int
    minus_log_p: float
    rate_value: float
    n_times_rate: float
    ratio: float
    truncation_bound: float


def tail_probability_exact(
    thermo: ThermoFunctions,
    n_sites: int,
    phi: float,
    M: float,
    site_tail: float = 1e-12,
) -> TailResult:
    """P(block average > M) under the product measure at fugacity phi, by
    iterated exact convolution of the truncated site pmf, compared against
    the large-deviation prediction exp(-n I(M)).
    """
    if n_sites < 1:
        raise ValueError("need at least one site")
    mean = thermo.density_of_fugacity(phi)
    if not M > mean:
        raise NotATailError(f"M={M} is not above the mean density R(phi)={mean:.6g}")
    pmf = thermo.marginal_distribution(phi, tail_mass=site_tail)
    conv = pmf.copy()
    for _ in range(n_sites - 1):
        conv = np.convolve(conv, pmf)
    target = M * n_sites
    nearest = round(target)
    if abs(target - nearest) < 1e-9:
        kmin = int(nearest) + 1  # strict inequality at an integer threshold
    else:
        kmin = int(math.ceil(target))
    p = float(conv[kmin:].sum()) if kmin < conv.size else 0.0
    rate = thermo.ld_rate(M, phi)
    minus_log = math.inf if p <= 0 else -math.log(p)
    n_rate = n_sites * rate
    return TailResult(
        p_tail=p,
        threshold_count=kmin,
        minus_log_p=minus_log,
        rate_value=rate,
        n_times_rate=n_rate,
        ratio=minus_log / n_rate if n_rate > 0 else math.inf,
        truncation_bound=site_tail * n_sites,
    )


def conditioned_site_marginal(
    thermo: ThermoFunctions, n_sites: int, phi: float, j: int, site_tail: float = 1e-14
) -> np.ndarray:
    """pmf of one site's occupation under the product measure conditioned on
    a total of j particles, via convolutions: an independent route to the
    canonical site marginal (and independent of phi up to truncation)."""
    pmf = thermo.marginal_distribution(phi, tail_mass=site_tail)
    if n_sites == 1:
        out = np.zeros(j + 1)
        out[j] = 1.0
        return out
    rest = pmf.copy()
    for _ in range(n_sites - 2):
        rest = np.convolve(rest, pmf)
    out = np.zeros(j + 1)
    for k in range(min(j, pmf.size - 1) + 1):
        if 0 <= j - k < rest.size:
            out[k] = pmf[k] * rest[j - k]
    total = out.sum()
    if total <= 0:
        raise ValueError("conditioning event has no truncated mass")
    return out / total
