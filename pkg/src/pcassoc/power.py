"""Analytic power, structured-matrix eigen closed forms, and 2-D geometry.

Power formulas are driven by the principal angles: the k-th PC test has
noncentrality |beta|^2 cos^2(theta_k) / lambda_k, and every combination test
inherits its power law from those quantities.  The closed-form optima over
the angle configuration (inverse-variance linear combination, Wald extremes,
MinP bounds) are implemented exactly as derived.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import chdtrc, chdtri, ndtr, ndtri

from .assoc import TestContext, minp_univariate, oracle_test, pcaq, pcfisher, pclc, pcminp, pco, pcq, single_pc_test
from .chisq import ChiSquareMixture, MixtureSpec, nc_chisq_sf
from .errors import DataError
from .model import (
    CorrelationMatrix,
    EigenSystem,
    SignalVector,
    _fix_column_signs,
    spectral_decompose,
)
from .mvn import MvnConfig, mvn_sample
from .seeds import Seed

__all__ = [
    "PowerQuery",
    "BoundaryCurve",
    "power_single_pc",
    "pcminp_power",
    "pcminp_power_bounds",
    "pclc_power",
    "pclc_optimal_angles",
    "power_quadratic",
    "pcfisher_power",
    "oracle_power",
    "exchangeable_eigensystem",
    "block_exchangeable_eigensystem",
    "BlockEigenReport",
    "rejection_boundary_2d",
    "power_curve_polar",
    "ANALYTIC_SWEEP_TESTS",
]

ANALYTIC_SWEEP_TESTS = (
    "PC1", "PC2", "PCMinP", "PCFisher", "PCLC", "WI", "Wald", "VC", "Oracle",
)


@dataclass(frozen=True)
class PowerQuery:
    """Significance level, signal vector, and eigensystem for a power question."""

    alpha: float
    beta: SignalVector
    eig: EigenSystem

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DataError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.beta.dim != self.eig.dim:
            raise DataError("beta dimension does not match the eigensystem")

    def ncps(self) -> np.ndarray:
        proj = self.eig.eigenvectors.T @ self.beta.beta
        return proj * proj / self.eig.eigenvalues

    def projections(self) -> np.ndarray:
        return self.eig.eigenvectors.T @ self.beta.beta


def _two_sided_normal_power(ncp, alpha):
    za = ndtri(alpha / 2.0)
    root = np.sqrt(ncp)
    return ndtr(za + root) + ndtr(za - root)


def power_single_pc(q: PowerQuery, k: int) -> float:
    """Power of the two-sided test on PC_k (k is 1-based)."""
    if not 1 <= k <= q.eig.dim:
        raise DataError(f"PC index {k} out of range 1..{q.eig.dim}")
    return float(_two_sided_normal_power(q.ncps()[k - 1], q.alpha))


def pcminp_power(q: PowerQuery) -> float:
    """Exact power of the minimum-PC-p-value test (independent PCs)."""
    k = q.eig.dim
    alpha_star = -np.expm1(np.log1p(-q.alpha) / k)
    per_pc = _two_sided_normal_power(q.ncps(), alpha_star)
    return float(-np.expm1(np.sum(np.log1p(-per_pc))))


def pcminp_power_bounds(norm: float, eig: EigenSystem, alpha: float):
    """(max, min) power of PCMinP over angle configurations at fixed |beta|.

    The maximum puts the whole signal on the last PC; the minimum spreads it
    as cos^2(theta_k) = lambda_k / K.
    """
    if norm <= 0.0:
        raise DataError("signal norm must be positive")
    k = eig.dim
    alpha_star = -np.expm1(np.log1p(-alpha) / k)
    za = ndtri(alpha_star / 2.0)
    lam_min = eig.eigenvalues[-1]
    hit_last = ndtr(za + norm / np.sqrt(lam_min)) + ndtr(za - norm / np.sqrt(lam_min))
    p_max = 1.0 - (1.0 - alpha) ** ((k - 1) / k) * (1.0 - hit_last)
    spread = ndtr(za + norm / np.sqrt(k)) + ndtr(za - norm / np.sqrt(k))
    p_min = 1.0 - (1.0 - spread) ** k
    return float(p_max), float(p_min)


def pclc_power(q: PowerQuery) -> float:
    """Power of the inverse-variance linear combination of PCs."""
    inv = 1.0 / q.eig.eigenvalues
    mean = float(np.sum(q.projections() * inv))
    ncp = mean * mean / float(np.sum(inv))
    return float(_two_sided_normal_power(ncp, q.alpha))


def pclc_optimal_angles(eig: EigenSystem) -> np.ndarray:
    """cos^2(theta_k) configuration that maximizes the linear combination's
    noncentrality: lambda_k^{-2} / sum_j lambda_j^{-2}."""
    inv2 = eig.eigenvalues ** -2.0
    return inv2 / inv2.sum()


def power_quadratic(q: PowerQuery, gamma: float) -> float:
    """Power of the eigenvalue-weighted quadratic combination PCQ_gamma.

    gamma = 1 reduces to the noncentral chi-square (Wald); other gammas use
    the noncentral mixture against the central mixture's critical value.
    """
    if gamma < 0:
        raise DataError(f"gamma must be nonnegative, got {gamma}")
    ncps = q.ncps()
    if gamma == 1.0:
        crit = chdtri(q.eig.dim, q.alpha)
        return float(nc_chisq_sf(crit, q.eig.dim, float(ncps.sum())))
    weights = q.eig.eigenvalues ** (1.0 - gamma)
    crit = ChiSquareMixture(MixtureSpec(weights)).isf(q.alpha)
    alt = ChiSquareMixture(MixtureSpec(weights, ncps))
    return float(alt.sf(crit))


def oracle_power(q: PowerQuery) -> float:
    """Power of the known-signal benchmark test (two-sided)."""
    sigma_inv_beta = q.eig.solve(q.beta.beta)
    ncp = float(q.beta.beta @ sigma_inv_beta)
    return float(_two_sided_normal_power(ncp, q.alpha))


def pcfisher_power(q: PowerQuery, grid_points: int = 2**14) -> float:
    """Power of the Fisher combination of PC p-values by numerical convolution.

    Each -2 log p_k has an analytic density under its noncentrality; the
    K-fold convolution is carried out on a uniform grid with FFTs.  Intended
    for small K (the grid grows with K); accuracy is ~1e-4.
    """
    k = q.eig.dim
    delta = np.sqrt(q.ncps())
    crit = chdtri(2 * k, q.alpha)
    if np.all(delta < 1e-12):
        return float(q.alpha)
    span = max(80.0, crit + 40.0, float(((delta.max() + 8.0) ** 2) * 1.3))
    h = span / grid_points
    y = (np.arange(grid_points) + 0.5) * h
    p_half = np.exp(-y / 2.0) / 2.0  # p/2 with p = exp(-y/2)
    qq = -ndtri(p_half)
    phi_q = np.exp(-0.5 * qq * qq) / np.sqrt(2.0 * np.pi)
    total_len = 1
    while total_len < grid_points * k + 1:
        total_len *= 2
    spectrum = np.ones(total_len // 2 + 1, dtype=np.complex128)
    for d in delta:
        dens = (
            (np.exp(-0.5 * (qq - d) ** 2) + np.exp(-0.5 * (qq + d) ** 2))
            / np.sqrt(2.0 * np.pi)
            * np.exp(-y / 2.0)
            / (4.0 * phi_q)
        )
        spectrum *= np.fft.rfft(dens * h, total_len)
    conv = np.fft.irfft(spectrum, total_len)
    grid = (np.arange(total_len) + 0.5 * k) * h
    below = grid <= crit
    return float(np.clip(1.0 - conv[below].sum(), 0.0, 1.0))


def _helmert_contrasts(m: int) -> np.ndarray:
    """Orthonormal zero-sum contrasts on m coordinates, in index order."""
    cols = np.zeros((m, m - 1))
    for j in range(1, m):
        cols[:j, j - 1] = 1.0
        cols[j, j - 1] = -float(j)
        cols[:, j - 1] /= np.sqrt(j * (j + 1.0))
    return cols


def exchangeable_eigensystem(k: int, rho: float):
    """Closed-form eigensystem of the exchangeable correlation matrix.

    Returns ``(EigenSystem, multiplicities)`` with multiplicities a list of
    (eigenvalue, count) pairs.  The degenerate eigenspace basis is the
    orthonormalized index-order contrast set: one valid choice of many.
    """
    if k < 2:
        raise DataError("exchangeable systems need at least 2 phenotypes")
    if not -1.0 / (k - 1) < rho < 1.0:
        raise DataError(
            f"rho={rho} outside the positive-definite range (-1/{k-1}, 1)"
        )
    sigma = CorrelationMatrix.exchangeable(k, rho)
    if rho == 0.0:
        eig = EigenSystem(np.ones(k), np.eye(k), sigma)
        return eig, [(1.0, k)]
    spike = 1.0 + (k - 1) * rho
    rest = 1.0 - rho
    uniform = np.full((k, 1), 1.0 / np.sqrt(k))
    contrasts = _helmert_contrasts(k)
    if rho > 0:
        lam = np.concatenate([[spike], np.full(k - 1, rest)])
        u = np.hstack([uniform, contrasts])
        mult = [(spike, 1), (rest, k - 1)]
    else:
        lam = np.concatenate([np.full(k - 1, rest), [spike]])
        u = np.hstack([contrasts, uniform])
        mult = [(rest, k - 1), (spike, 1)]
    eig = EigenSystem(lam, _fix_column_signs(u), sigma)
    return eig, mult


@dataclass(frozen=True)
class BlockEigenReport:
    """Closed-form spectrum of a block-diagonal exchangeable correlation.

    ``block_eigenvalues`` lists the four unsorted eigenvalues in block order
    (signal uniform, signal contrasts, noise uniform, noise contrasts) with
    their multiplicities and descriptors; ``eigensystem`` is the assembled
    full system with eigenvalues sorted descending.
    """

    block_eigenvalues: tuple
    multiplicities: tuple
    descriptors: tuple
    eigensystem: EigenSystem


def block_exchangeable_eigensystem(
    k1: int, k0: int, rho1: float, rho3: float
) -> BlockEigenReport:
    """Eigen closed form when signal and noise blocks are exchangeable and
    mutually uncorrelated.  Signal-block eigenvectors carry exactly zero
    loadings on noise coordinates and vice versa."""
    for name, k, rho in (("signal", k1, rho1), ("noise", k0, rho3)):
        if k < 2:
            raise DataError(f"{name} block needs at least 2 phenotypes")
        if not -1.0 / (k - 1) < rho < 1.0:
            raise DataError(f"{name} block rho={rho} outside its PD range")
    k = k1 + k0
    lam_vals = (
        1.0 + (k1 - 1) * rho1,
        1.0 - rho1,
        1.0 + (k0 - 1) * rho3,
        1.0 - rho3,
    )
    mults = (1, k1 - 1, 1, k0 - 1)
    descriptors = ("signal-uniform", "signal-contrast", "noise-uniform", "noise-contrast")

    entries = np.zeros((k, k))
    entries[:k1, :k1] = rho1
    entries[k1:, k1:] = rho3
    np.fill_diagonal(entries, 1.0)
    sigma = CorrelationMatrix(entries)

    columns = []
    values = []
    su = np.zeros((k, 1))
    su[:k1, 0] = 1.0 / np.sqrt(k1)
    columns.append(su)
    values.append(np.full(1, lam_vals[0]))
    sc = np.zeros((k, k1 - 1))
    sc[:k1] = _helmert_contrasts(k1)
    columns.append(sc)
    values.append(np.full(k1 - 1, lam_vals[1]))
    nu = np.zeros((k, 1))
    nu[k1:, 0] = 1.0 / np.sqrt(k0)
    columns.append(nu)
    values.append(np.full(1, lam_vals[2]))
    nc = np.zeros((k, k0 - 1))
    nc[k1:] = _helmert_contrasts(k0)
    columns.append(nc)
    values.append(np.full(k0 - 1, lam_vals[3]))

    lam = np.concatenate(values)
    u = np.hstack(columns)
    order = np.argsort(-lam, kind="stable")
    eig = EigenSystem(lam[order], _fix_column_signs(u[:, order]), sigma)
    return BlockEigenReport(
        block_eigenvalues=lam_vals,
        multiplicities=mults,
        descriptors=descriptors,
        eigensystem=eig,
    )


@dataclass(frozen=True)
class BoundaryCurve:
    """Polyline where a test's p-value equals alpha, in the (z1, z2) plane."""

    test_name: str
    alpha: float
    points: np.ndarray
    skipped_rays_deg: tuple = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DataError("boundary points must be an (n, 2) array")


def _scalar_evaluator(test_name, ctx, sigma, beta=None):
    if test_name.startswith("PC") and test_name[2:].isdigit():
        k = int(test_name[2:])
        return lambda z: single_pc_test(z, ctx, k).p_value
    simple = {
        "PCMinP": lambda z: pcminp(z, ctx).p_value,
        "PCFisher": lambda z: pcfisher(z, ctx).p_value,
        "PCLC": lambda z: pclc(z, ctx).p_value,
        "WI": lambda z: pcq(z, ctx, 0.0).p_value,
        "Wald": lambda z: pcq(z, ctx, 1.0).p_value,
        "VC": lambda z: pcq(z, ctx, 2.0).p_value,
        "PCAQ": lambda z: pcaq(z, ctx).p_value,
        "PCO": lambda z: pco(z, ctx).p_value,
        "MinP": lambda z: float(ctx.minp_pvalues(z[None, :])[0]),
    }
    if test_name in simple:
        return simple[test_name]
    if test_name == "Oracle":
        if beta is None:
            raise DataError("the Oracle boundary requires the signal vector")
        return lambda z: oracle_test(z, beta, sigma).p_value
    raise DataError(f"unknown test: {test_name}")


def rejection_boundary_2d(
    test_name: str,
    sigma2x2: CorrelationMatrix,
    alpha: float,
    resolution: int = 72,
    ctx: TestContext | None = None,
    beta: SignalVector | None = None,
    radius_cap: float = 12.0,
    tol: float = 1e-6,
) -> BoundaryCurve:
    """Trace the p = alpha contour by radial bisection on a uniform ray grid.

    Rays that never cross the contour inside ``radius_cap`` (e.g. rays along
    a single-PC boundary line) are reported in ``skipped_rays_deg``.
    """
    if sigma2x2.dim != 2:
        raise DataError("rejection boundaries are drawn in two dimensions only")
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must be in (0, 1)")
    if ctx is None:
        ctx = TestContext(sigma2x2)
    evaluate = _scalar_evaluator(test_name, ctx, sigma2x2, beta)
    points = []
    skipped = []
    angles = np.arange(resolution) * (360.0 / resolution)
    march = np.linspace(0.05, radius_cap, 241)
    for phi in angles:
        direction = np.array([np.cos(np.radians(phi)), np.sin(np.radians(phi))])
        lo_r = None
        hi_r = None
        prev = 1e-3
        for r in march:
            if evaluate(r * direction) <= alpha:
                lo_r, hi_r = prev, r
                break
            prev = r
        if hi_r is None:
            skipped.append(float(phi))
            continue
        a, b = lo_r, hi_r
        while b - a > tol:
            mid = 0.5 * (a + b)
            if evaluate(mid * direction) <= alpha:
                b = mid
            else:
                a = mid
        points.append(0.5 * (a + b) * direction)
    if not points:
        raise DataError(f"no boundary point found for {test_name} within radius {radius_cap}")
    return BoundaryCurve(
        test_name=test_name,
        alpha=alpha,
        points=np.array(points),
        skipped_rays_deg=tuple(skipped),
    )


def power_curve_polar(
    r: float,
    sigma2x2: CorrelationMatrix,
    alpha: float,
    grid_deg: float = 5.0,
    method: str = "analytic",
    tests=None,
    reps: int = 10_000,
    seed: Seed = Seed(0),
    ctx: TestContext | None = None,
):
    """Per-test power as the signal direction sweeps the circle.

    beta = r (cos phi, sin phi) on a uniform angular grid.  The analytic
    method covers single PCs, PCMinP, PCFisher, PCLC, the quadratic family,
    and the Oracle; PCAQ and PCO require ``method="monte_carlo"``.
    Returns ``(angles_deg, {test: powers})``.
    """
    if sigma2x2.dim != 2:
        raise DataError("the polar sweep is defined for two phenotypes")
    angles = np.arange(0.0, 360.0 + grid_deg / 2, grid_deg)
    eig = spectral_decompose(sigma2x2)
    if method == "analytic":
        tests = tuple(tests) if tests is not None else ANALYTIC_SWEEP_TESTS
        not_analytic = [t for t in tests if t in ("PCAQ", "PCO")]
        if not_analytic:
            raise DataError(f"{not_analytic} have no analytic power; use monte_carlo")
        out = {t: np.empty(angles.shape) for t in tests}
        for j, phi in enumerate(angles):
            beta = SignalVector(r * np.array([np.cos(np.radians(phi)), np.sin(np.radians(phi))]))
            q = PowerQuery(alpha=alpha, beta=beta, eig=eig)
            for t in tests:
                if t == "PC1":
                    out[t][j] = power_single_pc(q, 1)
                elif t == "PC2":
                    out[t][j] = power_single_pc(q, 2)
                elif t == "PCMinP":
                    out[t][j] = pcminp_power(q)
                elif t == "PCFisher":
                    out[t][j] = pcfisher_power(q)
                elif t == "PCLC":
                    out[t][j] = pclc_power(q)
                elif t == "WI":
                    out[t][j] = power_quadratic(q, 0.0)
                elif t == "Wald":
                    out[t][j] = power_quadratic(q, 1.0)
                elif t == "VC":
                    out[t][j] = power_quadratic(q, 2.0)
                elif t == "Oracle":
                    out[t][j] = oracle_power(q)
                else:
                    raise DataError(f"no analytic power for test {t}")
        return angles, out
    if method != "monte_carlo":
        raise DataError("method must be 'analytic' or 'monte_carlo'")
    tests = tuple(tests) if tests is not None else ("PCAQ", "PCO")
    if ctx is None:
        ctx = TestContext(sigma2x2, rx_seed=seed.child(999))
    out = {t: np.empty(angles.shape) for t in tests}
    from .battery import COMPONENT_TESTS, QUAD_TESTS  # local to avoid cycle confusion

    for j, phi in enumerate(angles):
        beta = r * np.array([np.cos(np.radians(phi)), np.sin(np.radians(phi))])
        z = mvn_sample(beta, sigma2x2, reps, seed.child(3, j))
        comp = ctx.component_pvalues(z, COMPONENT_TESTS)
        for t in tests:
            if t == "PCAQ":
                mat = np.column_stack([comp[c] for c in QUAD_TESTS])
                p = ctx.adjusted_min_pvalues(mat, "quad")
            elif t == "PCO":
                mat = np.column_stack([comp[c] for c in COMPONENT_TESTS])
                p = ctx.adjusted_min_pvalues(mat, "omni")
            elif t in comp:
                p = comp[t]
            else:
                raise DataError(f"unsupported monte carlo sweep test {t}")
            out[t][j] = float(np.mean(p <= alpha))
    return angles, out
