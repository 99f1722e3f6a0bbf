"""The association tests: single PCs, combinations, and omnibus adjustments.

A :class:`TestContext` bundles everything that depends only on Sigma: the
eigensystem, the mixture null distributions, the Monte Carlo estimates of the
between-test correlation matrices (R_X), and the tail curves that turn a
minimum p-value into an adjusted p-value.  It is built once per correlation
matrix and then shared, read-only, across any number of Z-vectors or worker
threads.

The omnibus adjustment p = P(min_gamma X_gamma <= Phi^{-1}(min p)) is a fixed
monotone function of the minimum p-value once R_X is fixed, so the context
tabulates log of the ratio p / min-p on a dense grid (each knot evaluated by
the relative-accuracy tail decomposition) and interpolates monotonically.
The ratio is bounded between 1 and the number of combined tests, which makes
the Bonferroni sandwich min p <= p <= m * min p hold by construction.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import chdtrc, ndtr, ndtri

from .battery import COMPONENT_TESTS, QUAD_TESTS, TestBattery, estimate_rx
from .chisq import P_FLOOR, ChiSquareMixture, MixtureSpec
from .errors import DataError
from .model import (
    CorrelationMatrix,
    EigenSystem,
    SignalVector,
    TestReport,
    ZVector,
    spectral_decompose,
)
from .mvn import MvnConfig, max_abs_exceed_ratio, min_lower_tail_ratio
from .seeds import Seed

__all__ = [
    "TestContext",
    "oracle_test",
    "single_pc_test",
    "pcminp",
    "pcfisher",
    "pclc",
    "pcq",
    "pcaq",
    "pco",
    "minp_univariate",
]

_T_GRID = np.concatenate(
    [np.linspace(-37.5, -10.0, 23), np.linspace(-9.75, 8.5, 62)]
)
_C_GRID = np.concatenate(
    [np.linspace(0.0, 9.75, 63)[:-1], np.linspace(9.75, 37.5, 23)]
)
_CURVE_REL_TARGET = 2e-4


class _TailCurve:
    """Monotone interpolant of log(adjusted p / min p) against the threshold."""

    def __init__(self, grid, log_ratio, n_tests):
        self.grid = grid
        self.n_tests = n_tests
        self.interp = PchipInterpolator(grid, log_ratio, extrapolate=False)
        self.log_cap = np.log(n_tests)

    def adjust(self, minp, threshold):
        """Adjusted p from the raw min-p statistic and its normal-scale threshold."""
        t = np.clip(threshold, self.grid[0], self.grid[-1])
        g = np.clip(self.interp(t), 0.0, self.log_cap)
        return np.minimum(minp * np.exp(g), 1.0)


def _build_min_tail_curve(rx: CorrelationMatrix, cfg: MvnConfig) -> _TailCurve:
    ratios = np.empty(_T_GRID.shape)
    for j, t in enumerate(_T_GRID):
        ratios[j], _ = min_lower_tail_ratio(float(t), rx.entries, cfg, _CURVE_REL_TARGET)
    return _TailCurve(_T_GRID, np.log(ratios), rx.dim)


def _build_max_abs_curve(sigma: CorrelationMatrix, cfg: MvnConfig) -> _TailCurve:
    ratios = np.empty(_C_GRID.shape)
    for j, c in enumerate(_C_GRID):
        ratios[j], _ = max_abs_exceed_ratio(float(c), sigma.entries, cfg, _CURVE_REL_TARGET)
    # indexed by c = -Phi^{-1}(minp / 2), increasing in c
    return _TailCurve(_C_GRID, np.log(ratios), sigma.dim)


class TestContext:
    """Shared per-Sigma state: eigensystem, R_X matrices, and tail curves.

    ``rx_seed`` is the one recorded seed from which the R_X draws and all QMC
    streams are derived; two contexts built from the same Sigma and seed are
    identical.  Immutable after construction apart from lazy caches, which
    are deterministic functions of the construction arguments.
    """

    def __init__(
        self,
        sigma: CorrelationMatrix,
        rx_b: int = 1000,
        rx_seed: Seed = Seed(0),
        p_floor: float = P_FLOOR,
        eig: EigenSystem | None = None,
        mvn_target: float = 1e-6,
    ):
        if eig is not None and eig.source is not sigma:
            raise DataError("eigensystem was not derived from the supplied sigma")
        self.sigma = sigma
        self.eig = eig if eig is not None else spectral_decompose(sigma)
        self.battery = TestBattery(self.eig)
        self.rx_seed = rx_seed
        self.p_floor = float(p_floor)
        self.mvn_target = float(mvn_target)
        self.rx_quad = estimate_rx(
            sigma, QUAD_TESTS, rx_b, rx_seed.child(0), battery=self.battery
        )
        self.rx_omni = estimate_rx(
            sigma, COMPONENT_TESTS, rx_b, rx_seed.child(1), battery=self.battery
        )
        self._curves: dict[str, _TailCurve] = {}

    @property
    def dim(self) -> int:
        return self.eig.dim

    def _mvn_cfg(self, stream: int) -> MvnConfig:
        return MvnConfig(
            seed=self.rx_seed.child(100 + stream),
            target=self.mvn_target,
            min_points=2**11,
        )

    def tail_curve(self, kind: str) -> _TailCurve:
        """Lazy adjusted-p curves: 'quad' (PCAQ), 'omni' (PCO), 'minp' (MinP)."""
        if kind not in self._curves:
            if kind == "quad":
                self._curves[kind] = _build_min_tail_curve(self.rx_quad, self._mvn_cfg(0))
            elif kind == "omni":
                self._curves[kind] = _build_min_tail_curve(self.rx_omni, self._mvn_cfg(1))
            elif kind == "minp":
                self._curves[kind] = _build_max_abs_curve(self.sigma, self._mvn_cfg(2))
            else:
                raise DataError(f"unknown tail curve {kind!r}")
        return self._curves[kind]

    def floor(self, p):
        """Clamp p-values at the configured floor; returns (p, truncated mask)."""
        p_arr = np.asarray(p, dtype=np.float64)
        clipped = np.maximum(p_arr, self.p_floor)
        return clipped, p_arr < self.p_floor

    # -- batch entry points used by simulation tables and the GWAS pipeline --

    def component_pvalues(self, z_rows, tests=COMPONENT_TESTS):
        _, pvals = self.battery.evaluate(z_rows, tests)
        out = {}
        for name, p in pvals.items():
            out[name], _ = self.floor(p)
        return out

    def adjusted_min_pvalues(self, component_p: np.ndarray, kind: str):
        """Vectorized PCAQ/PCO: component p-values (rows x tests) -> adjusted p."""
        minp = component_p.min(axis=1)
        t = ndtri(np.maximum(minp, self.p_floor))
        return self.tail_curve(kind).adjust(minp, t)

    def minp_pvalues(self, z_rows: np.ndarray):
        """Vectorized univariate-MinP p-values through the tabulated curve."""
        z_rows = np.atleast_2d(np.asarray(z_rows, dtype=np.float64))
        m = 2.0 * ndtr(-np.abs(z_rows).max(axis=1))
        m_safe = np.maximum(m, self.p_floor)
        c = -ndtri(m_safe / 2.0)
        return self.tail_curve("minp").adjust(m_safe, c)


def _as_z(z, dim: int) -> np.ndarray:
    zv = z.z if isinstance(z, ZVector) else np.atleast_1d(np.asarray(z, dtype=np.float64))
    if zv.shape != (dim,):
        raise DataError(f"z has shape {zv.shape}, expected ({dim},)")
    return zv


def _report(name, stat, p, ctx_floor) -> TestReport:
    p_clipped = max(float(p), ctx_floor)
    return TestReport(
        test_name=name,
        statistic=float(stat),
        p_value=min(p_clipped, 1.0),
        truncated=float(p) < ctx_floor,
    )


def oracle_test(z, beta: SignalVector, sigma: CorrelationMatrix) -> TestReport:
    """Benchmark-only test with known signal vector: beta' Sigma^{-1} z.

    Requires the true beta, so it is excluded from data-analysis defaults and
    used purely as a power reference.
    """
    if beta.norm <= 0.0:
        raise DataError("oracle test requires a nonzero signal vector")
    zv = _as_z(z, sigma.dim)
    if beta.dim != sigma.dim:
        raise DataError("beta dimension does not match sigma")
    w = np.linalg.solve(sigma.entries, beta.beta)
    stat = float(w @ zv)
    sd = float(np.sqrt(w @ beta.beta))
    p = 2.0 * ndtr(-abs(stat) / sd)
    return _report("Oracle", stat, p, P_FLOOR)


def single_pc_test(z, ctx: TestContext, k: int) -> TestReport:
    """Two-sided test on the k-th principal component (k is 1-based)."""
    if not 1 <= k <= ctx.dim:
        raise DataError(f"PC index {k} out of range 1..{ctx.dim}")
    zv = _as_z(z, ctx.dim)
    stats, pvals = ctx.battery.evaluate(zv[None, :], (f"PC{k}",))
    return _report(f"PC{k}", stats[f"PC{k}"][0], pvals[f"PC{k}"][0], ctx.p_floor)


def _component_report(z, ctx: TestContext, name: str) -> TestReport:
    zv = _as_z(z, ctx.dim)
    stats, pvals = ctx.battery.evaluate(zv[None, :], (name,))
    return _report(name, stats[name][0], pvals[name][0], ctx.p_floor)


def pcminp(z, ctx: TestContext) -> TestReport:
    """Minimum PC p-value; null p = 1 - (1 - min p)^K by PC independence."""
    return _component_report(z, ctx, "PCMinP")


def pcfisher(z, ctx: TestContext) -> TestReport:
    """Fisher combination -2 sum log p_k of the K independent PC p-values."""
    return _component_report(z, ctx, "PCFisher")


def pclc(z, ctx: TestContext) -> TestReport:
    """Inverse-variance-weighted linear combination of PCs."""
    return _component_report(z, ctx, "PCLC")


def pcq(z, ctx: TestContext, gamma: float) -> TestReport:
    """Eigenvalue-weighted quadratic combination sum lam_k^{-gamma} PC_k^2.

    gamma = 0, 1, 2 are the working-independence, Wald, and variance-component
    tests; other nonnegative gammas are supported with their own mixture null.
    """
    if gamma < 0:
        raise DataError(f"gamma must be nonnegative, got {gamma}")
    zv = _as_z(z, ctx.dim)
    pc = ctx.battery.pcs(zv[None, :])
    stat = float(ctx.battery.quad_statistic(pc, gamma)[0])
    if gamma == 1.0:
        name, p = "Wald", chdtrc(ctx.dim, stat)
    else:
        name = {0.0: "WI", 2.0: "VC"}.get(float(gamma), f"PCQ{gamma:g}")
        p = ctx.battery.mixture_sf(gamma)(stat)
    return _report(name, stat, p, ctx.p_floor)


def _min_adjusted(z, ctx: TestContext, tests, kind: str, name: str) -> TestReport:
    zv = _as_z(z, ctx.dim)
    _, pvals = ctx.battery.evaluate(zv[None, :], tests)
    floored = [ctx.floor(pvals[t][0]) for t in tests]
    minp = min(p for p, _ in floored)
    truncated = any(tr and p == minp for p, tr in floored)
    t_thresh = float(ndtri(minp))
    p_adj = float(ctx.tail_curve(kind).adjust(minp, t_thresh))
    return TestReport(name, statistic=minp, p_value=p_adj, truncated=bool(truncated))


def pcaq(z, ctx: TestContext) -> TestReport:
    """Adaptive quadratic test: smallest of the WI/Wald/VC p-values, adjusted
    through their joint normal-scale correlation R_X."""
    return _min_adjusted(z, ctx, QUAD_TESTS, "quad", "PCAQ")


def pco(z, ctx: TestContext) -> TestReport:
    """Omnibus test over PCMinP, PCFisher, PCLC, WI, Wald and VC."""
    return _min_adjusted(z, ctx, COMPONENT_TESTS, "omni", "PCO")


def minp_univariate(z, sigma: CorrelationMatrix, cfg: MvnConfig | None = None) -> TestReport:
    """Classical MinP on the original Z-scores, adjusted through Sigma.

    p = P(min_k p_k <= observed) = P(max_k |Z_k| >= c) under N(0, Sigma),
    computed by the relative-accuracy tail decomposition.
    """
    zv = _as_z(z, sigma.dim)
    cfg = cfg if cfg is not None else MvnConfig(seed=Seed(0))
    m = float(2.0 * ndtr(-np.abs(zv).max()))
    m_safe = max(m, P_FLOOR)
    c = float(-ndtri(m_safe / 2.0))
    ratio, _ = max_abs_exceed_ratio(c, sigma.entries, cfg)
    p = min(m_safe * ratio, 1.0)
    return TestReport("MinP", statistic=m_safe, p_value=p, truncated=m < P_FLOOR)


def general_pcq_mixture(eig: EigenSystem, gamma: float) -> ChiSquareMixture:
    """Null mixture of PCQ_gamma; exposed for power analysis."""
    return ChiSquareMixture(MixtureSpec(eig.eigenvalues ** (1.0 - gamma)))
