"""Vectorized evaluation of the combinable PC tests.

One battery is built per correlation matrix and reused for every Z-vector:
simulation replicates, R_X estimation draws, and genome-wide SNP panels all
go through the same code path, so scalar and batch results agree exactly.

Null survival functions of the two chi-square mixture statistics come from
the exact series when it is short; long series (ill-conditioned spectra) are
tabulated once on a dense grid and interpolated monotonically in log space,
which keeps batch evaluation O(1) per point at ~1e-7 relative error.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import chdtrc, ndtr, ndtri

from .chisq import P_FLOOR, ChiSquareMixture, MixtureSpec
from .errors import DataError
from .model import CorrelationMatrix, EigenSystem, spectral_decompose
from .mvn import mvn_sample
from .seeds import Seed

__all__ = [
    "QUAD_TESTS",
    "COMPONENT_TESTS",
    "TestBattery",
    "estimate_rx",
]

QUAD_TESTS = ("WI", "Wald", "VC")
COMPONENT_TESTS = ("PCMinP", "PCFisher", "PCLC", "WI", "Wald", "VC")

_EXACT_TERM_LIMIT = 512
RX_CLAMP = 1.0 - 1e-10


class _MixtureSF:
    """Null survival function of one mixture statistic, batch-callable."""

    def __init__(self, weights):
        self.dist = ChiSquareMixture(MixtureSpec(weights))
        self._interp = None
        if self.dist.nterms > _EXACT_TERM_LIMIT:
            self._interp = self._build_interp()

    def _build_interp(self):
        x_mid = self.dist.isf(0.5)
        x_hi = x_mid
        while self.dist.sf(x_hi) > 1e-305:
            x_hi *= 2.0
        head = np.linspace(0.0, x_mid, 160)
        tail = np.geomspace(x_mid, x_hi, 480)[1:]
        knots = np.concatenate([head, tail])
        vals = self.dist.sf(knots)
        logp = np.log(np.maximum(vals, 1e-320))
        return PchipInterpolator(knots, logp, extrapolate=False), x_hi

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self._interp is None:
            return self.dist.sf(x)
        interp, x_hi = self._interp
        scalar = x.ndim == 0
        xa = np.atleast_1d(x)
        out = np.zeros(xa.shape)
        inside = xa < x_hi
        out[inside] = np.exp(interp(xa[inside]))
        # beyond the table the survival mass is below 1e-305: reported as 0
        # and floored by the caller.
        return float(out[0]) if scalar else out


class TestBattery:
    """Statistics and p-values of the combinable tests for one eigensystem."""

    def __init__(self, eig: EigenSystem):
        self.eig = eig
        self.lam = eig.eigenvalues
        self.sqrt_lam = np.sqrt(self.lam)
        self.inv_lam = 1.0 / self.lam
        self.dim = eig.dim
        self.pclc_sd = float(np.sqrt(np.sum(self.inv_lam)))
        self._mix_sf = {}

    def mixture_sf(self, gamma: float) -> _MixtureSF:
        key = float(gamma)
        if key not in self._mix_sf:
            self._mix_sf[key] = _MixtureSF(self.lam ** (1.0 - key))
        return self._mix_sf[key]

    def pcs(self, z_rows: np.ndarray) -> np.ndarray:
        """Principal component scores, one row per Z-vector."""
        z_rows = np.atleast_2d(np.asarray(z_rows, dtype=np.float64))
        if z_rows.shape[1] != self.dim:
            raise DataError(
                f"Z rows have {z_rows.shape[1]} phenotypes, eigensystem has {self.dim}"
            )
        return z_rows @ self.eig.eigenvectors

    def pc_pvalues(self, pc: np.ndarray) -> np.ndarray:
        return 2.0 * ndtr(-np.abs(pc) / self.sqrt_lam)

    def quad_statistic(self, pc: np.ndarray, gamma: float) -> np.ndarray:
        return (pc * pc) @ (self.lam ** (-float(gamma)))

    def evaluate(self, z_rows: np.ndarray, tests=COMPONENT_TESTS):
        """Statistics and p-values for the requested tests.

        Returns ``(stats, pvals)`` dictionaries of 1-D arrays aligned with
        the input rows.  PCMinP's statistic is its smallest PC p-value; the
        quadratic statistics are their weighted sums of squares.
        """
        unknown = [t for t in tests if t not in COMPONENT_TESTS and not t.startswith("PC")]
        if unknown:
            raise DataError(f"unknown test(s): {unknown}")
        pc = self.pcs(z_rows)
        ppc = self.pc_pvalues(pc)
        stats: dict[str, np.ndarray] = {}
        pvals: dict[str, np.ndarray] = {}
        for name in tests:
            if name == "PCMinP":
                m = ppc.min(axis=1)
                stats[name] = m
                pvals[name] = -np.expm1(self.dim * np.log1p(-np.minimum(m, 1.0 - 1e-16)))
            elif name == "PCFisher":
                f = -2.0 * np.sum(np.log(np.maximum(ppc, P_FLOOR)), axis=1)
                stats[name] = f
                pvals[name] = chdtrc(2 * self.dim, f)
            elif name == "PCLC":
                s = pc @ self.inv_lam
                stats[name] = s
                pvals[name] = 2.0 * ndtr(-np.abs(s) / self.pclc_sd)
            elif name == "WI":
                q = self.quad_statistic(pc, 0.0)
                stats[name] = q
                pvals[name] = self.mixture_sf(0.0)(q)
            elif name == "Wald":
                q = self.quad_statistic(pc, 1.0)
                stats[name] = q
                pvals[name] = chdtrc(self.dim, q)
            elif name == "VC":
                q = self.quad_statistic(pc, 2.0)
                stats[name] = q
                pvals[name] = self.mixture_sf(2.0)(q)
            elif name.startswith("PC"):
                k = _pc_index(name, self.dim)
                stats[name] = pc[:, k - 1] / self.sqrt_lam[k - 1]
                pvals[name] = ppc[:, k - 1]
        return stats, pvals


def _pc_index(name: str, dim: int) -> int:
    try:
        k = int(name[2:])
    except ValueError:
        raise DataError(f"unknown test: {name}") from None
    if not 1 <= k <= dim:
        raise DataError(f"{name} out of range for {dim} phenotypes")
    return k


def _scores_to_corr(x: np.ndarray, tests) -> CorrelationMatrix:
    sd = x.std(axis=0)
    dead = np.nonzero(sd == 0.0)[0]
    if dead.size:
        raise DataError(
            f"degenerate transformed scores (zero variance) for {[tests[i] for i in dead]}"
        )
    r = np.corrcoef(x, rowvar=False)
    r = (r + r.T) / 2.0
    off = ~np.eye(r.shape[0], dtype=bool)
    r[off] = np.clip(r[off], -RX_CLAMP, RX_CLAMP)
    np.fill_diagonal(r, 1.0)
    w = np.linalg.eigvalsh(r)
    if w[0] <= 0.0:
        # clamping can leave the matrix just barely indefinite
        w2, v = np.linalg.eigh(r)
        w2 = np.clip(w2, 1e-12, None)
        r = (v * w2) @ v.T
        scale = np.sqrt(np.diag(r))
        r = r / np.outer(scale, scale)
        off = ~np.eye(r.shape[0], dtype=bool)
        r[off] = np.clip(r[off], -RX_CLAMP, RX_CLAMP)
        np.fill_diagonal(r, 1.0)
    return CorrelationMatrix(r, names=tuple(tests), min_eig_ratio=0.0)


def estimate_rx(
    sigma: CorrelationMatrix,
    tests=QUAD_TESTS,
    b: int = 1000,
    seed: Seed = Seed(0),
    battery: TestBattery | None = None,
) -> CorrelationMatrix:
    """Monte Carlo estimate of the correlation among transformed test p-values.

    Draws ``b`` null Z-vectors from N(0, sigma), computes each test's p-value,
    maps them through the inverse normal CDF, and returns the sample correlation
    matrix of the transformed scores.  Off-diagonal magnitudes are clamped to
    1 - 1e-10 so downstream MVN integration stays positive definite even when
    tests coincide (e.g. all three quadratic tests under sigma = I).
    """
    tests = tuple(tests)
    bad = [t for t in tests if t not in COMPONENT_TESTS]
    if bad:
        raise DataError(f"R_X supports {COMPONENT_TESTS}, got {bad}")
    if b < 100:
        raise DataError(f"R_X estimation needs at least 100 draws, got {b}")
    if battery is None:
        battery = TestBattery(spectral_decompose(sigma))
    z = mvn_sample(None, sigma, b, seed)
    _, pvals = battery.evaluate(z, tests)
    p = np.column_stack([pvals[t] for t in tests])
    x = ndtri(np.clip(p, P_FLOOR, 1.0 - 1e-16))
    return _scores_to_corr(x, tests)
