"""Domain types and spectral primitives for correlated Z-score panels.

A SNP's per-phenotype Z-scores are modelled as one draw from N(beta, Sigma)
with Sigma the K x K correlation matrix of the scores under the null.  This
module owns Sigma, its eigensystem, the signal vector, and the projection /
angle geometry that every test builds on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = [
    "CorrelationMatrix",
    "EigenSystem",
    "SignalVector",
    "PrincipalAngles",
    "ZVector",
    "TestReport",
    "spectral_decompose",
    "project_pcs",
    "principal_angles",
    "read_correlation",
    "write_correlation",
]

ASYMMETRY_TOL = 1e-12
MIN_EIGENVALUE_RATIO = 1e-8


def _readonly(a, dtype=np.float64):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


class CorrelationMatrix:
    """Symmetric positive-definite correlation matrix with unit diagonal.

    Construction symmetrizes asymmetry below ``ASYMMETRY_TOL`` silently and
    rejects anything larger.  By default, matrices with an eigenvalue below
    ``MIN_EIGENVALUE_RATIO`` times the largest are rejected as numerically
    singular; callers that deliberately work with near-singular matrices
    (e.g. clamped test-statistic correlations) may relax ``min_eig_ratio``.

    Instances are immutable and safe to share across threads.
    """

    __slots__ = ("_entries", "_names", "_eigenvalues")

    def __init__(self, entries, names=None, min_eig_ratio=MIN_EIGENVALUE_RATIO):
        m = np.asarray(entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataError(f"correlation matrix must be square, got shape {m.shape}")
        if m.shape[0] < 1:
            raise DataError("correlation matrix must be at least 1x1")
        if not np.all(np.isfinite(m)):
            raise DataError("correlation matrix contains non-finite entries")
        asym = np.max(np.abs(m - m.T)) if m.size else 0.0
        if asym > ASYMMETRY_TOL:
            raise DataError(
                f"matrix asymmetry {asym:.3e} exceeds tolerance {ASYMMETRY_TOL:.0e}"
            )
        m = (m + m.T) / 2.0
        diag = np.diag(m)
        if np.max(np.abs(diag - 1.0)) > 1e-6:
            raise DataError(
                f"diagonal must be 1, worst entry {diag[np.argmax(np.abs(diag - 1.0))]!r}"
            )
        np.fill_diagonal(m, 1.0)
        off = m[~np.eye(m.shape[0], dtype=bool)]
        if off.size and np.max(np.abs(off)) > 1.0 + 1e-12:
            raise DataError(
                f"off-diagonal correlation out of [-1, 1]: {off[np.argmax(np.abs(off))]!r}"
            )
        np.clip(m, -1.0, 1.0, out=m)
        np.fill_diagonal(m, 1.0)

        w = np.linalg.eigvalsh(m)
        if w[0] <= 0.0:
            raise DataError(
                f"matrix is not positive definite: smallest eigenvalue {w[0]:.6e}"
            )
        if min_eig_ratio > 0.0 and w[0] < min_eig_ratio * w[-1]:
            raise DataError(
                f"matrix is numerically singular: smallest eigenvalue {w[0]:.6e} is "
                f"below {min_eig_ratio:.0e} of the largest ({w[-1]:.6e}); consider "
                "dropping one of the highly correlated phenotypes"
            )

        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != m.shape[0]:
                raise DataError(
                    f"{len(names)} phenotype names for a {m.shape[0]}-dim matrix"
                )
        self._entries = _readonly(m)
        self._names = names
        self._eigenvalues = _readonly(w)

    @property
    def dim(self) -> int:
        return self._entries.shape[0]

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def names(self):
        return self._names

    def __array__(self, dtype=None, copy=None):
        return np.array(self._entries, dtype=dtype)

    def __repr__(self):
        return f"CorrelationMatrix(dim={self.dim})"

    @classmethod
    def identity(cls, dim: int) -> "CorrelationMatrix":
        return cls(np.eye(dim))

    @classmethod
    def exchangeable(cls, dim: int, rho: float) -> "CorrelationMatrix":
        m = np.full((dim, dim), float(rho))
        np.fill_diagonal(m, 1.0)
        return cls(m)


@dataclass(frozen=True)
class EigenSystem:
    """Spectral decomposition Sigma = U diag(lam) U^T.

    ``eigenvalues`` are sorted descending; the k-th column of ``eigenvectors``
    is the k-th eigenvector.  U is orthonormal with |det U| = 1; the sign of
    each column follows the convention of :func:`spectral_decompose` when the
    system is produced there, but any valid orthonormal basis is accepted
    (degenerate eigenvalues admit infinitely many).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source: CorrelationMatrix

    def __post_init__(self):
        lam = _readonly(self.eigenvalues)
        u = _readonly(self.eigenvectors)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenvectors", u)
        k = self.source.dim
        if lam.shape != (k,) or u.shape != (k, k):
            raise DataError("eigensystem shapes inconsistent with source matrix")
        if np.any(lam <= 0.0):
            raise DataError(f"non-positive eigenvalue {lam.min():.6e}")
        if np.any(np.diff(lam) > 1e-10 * max(1.0, lam[0])):
            raise DataError("eigenvalues must be sorted descending")
        gram = u.T @ u
        if np.max(np.abs(gram - np.eye(k))) > 1e-10:
            raise DataError("eigenvector matrix is not orthonormal to 1e-10")
        recon = (u * lam) @ u.T
        if np.max(np.abs(recon - self.source.entries)) > 1e-10:
            raise DataError("U diag(lam) U^T does not reconstruct the source matrix")

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def det_sign(self) -> float:
        """Sign of det(U); +1 or -1 (both orientations occur in practice)."""
        return float(np.sign(np.linalg.det(self.eigenvectors)))

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Sigma^{-1} v through the decomposition."""
        v = np.asarray(v, dtype=np.float64)
        return self.eigenvectors @ ((self.eigenvectors.T @ v).T / self.eigenvalues).T


@dataclass(frozen=True)
class SignalVector:
    """Mean vector of the Z-scores under the alternative, with cached norm."""

    beta: np.ndarray
    norm: float = field(init=False)

    def __post_init__(self):
        b = _readonly(np.atleast_1d(self.beta))
        if b.ndim != 1:
            raise DataError("signal vector must be one-dimensional")
        if not np.all(np.isfinite(b)):
            raise DataError("signal vector contains non-finite entries")
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "norm", float(np.sqrt(np.sum(b * b))))

    @property
    def dim(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class PrincipalAngles:
    """Angles between the signal vector and each eigenvector, in degrees."""

    angles_deg: np.ndarray
    cosines: np.ndarray

    def __post_init__(self):
        a = _readonly(self.angles_deg)
        c = _readonly(self.cosines)
        object.__setattr__(self, "angles_deg", a)
        object.__setattr__(self, "cosines", c)
        if a.shape != c.shape or a.ndim != 1:
            raise DataError("angles and cosines must be 1-D and the same length")
        if np.any(a < -1e-9) or np.any(a > 180.0 + 1e-9):
            raise DataError("angles must lie in [0, 180] degrees")
        if abs(np.sum(c * c) - 1.0) > 1e-10:
            raise DataError("squared cosines must sum to 1")
        if np.max(np.abs(np.cos(np.radians(a)) - c)) > 1e-12:
            raise DataError("cosines inconsistent with angles")


@dataclass(frozen=True)
class ZVector:
    """One SNP's Z-scores, optionally tagged with its genomic identity."""

    z: np.ndarray
    snp_id: str | None = None
    chrom: str | None = None
    pos: int | None = None

    def __post_init__(self):
        z = _readonly(np.atleast_1d(self.z))
        if z.ndim != 1:
            raise DataError("z must be one-dimensional")
        if not np.all(np.isfinite(z)):
            raise DataError("z contains non-finite entries")
        object.__setattr__(self, "z", z)

    @property
    def dim(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class TestReport:
    """Outcome of one test on one Z-vector."""

    test_name: str
    statistic: float
    p_value: float
    truncated: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise DataError(f"p-value {self.p_value!r} outside [0, 1]")


def _fix_column_signs(u: np.ndarray) -> np.ndarray:
    """Deterministic sign convention: in each column, the entry of largest
    magnitude is made positive; near-ties (relative 1e-12) resolve to the
    highest index.  No determinant adjustment is applied, so det(U) may be
    either +1 or -1 depending on Sigma."""
    u = u.copy()
    for k in range(u.shape[1]):
        col = u[:, k]
        mags = np.abs(col)
        top = mags.max()
        idx = np.nonzero(mags >= top * (1.0 - 1e-12))[0][-1]
        if col[idx] < 0:
            u[:, k] = -col
    return u


def spectral_decompose(sigma: CorrelationMatrix) -> EigenSystem:
    """Eigendecomposition of Sigma with descending eigenvalues and a
    deterministic eigenvector sign convention.

    For degenerate eigenvalues the returned basis is the solver's basis for
    that eigenspace, post-processed by the sign rule; it is one valid choice
    among infinitely many.
    """
    w, v = np.linalg.eigh(sigma.entries)
    order = np.argsort(w)[::-1]
    w = np.ascontiguousarray(w[order])
    v = np.ascontiguousarray(v[:, order])
    if w[-1] <= 0.0:
        raise DataError(f"matrix is not positive definite: eigenvalue {w[-1]:.6e}")
    return EigenSystem(eigenvalues=w, eigenvectors=_fix_column_signs(v), source=sigma)


def project_pcs(z, eig: EigenSystem) -> np.ndarray:
    """Principal-component scores PC_k = u_k^T z."""
    zv = z.z if isinstance(z, ZVector) else np.asarray(z, dtype=np.float64)
    if zv.shape != (eig.dim,):
        raise DataError(f"z has dimension {zv.shape}, eigensystem is {eig.dim}")
    return eig.eigenvectors.T @ zv


def principal_angles(beta: SignalVector, eig: EigenSystem) -> PrincipalAngles:
    """Angle of the signal vector to each eigenvector, in degrees."""
    if beta.dim != eig.dim:
        raise DataError(f"beta has dimension {beta.dim}, eigensystem is {eig.dim}")
    if beta.norm <= 0.0:
        raise DataError("principal angles are undefined for a zero signal vector")
    cos = np.clip(eig.eigenvectors.T @ beta.beta / beta.norm, -1.0, 1.0)
    return PrincipalAngles(angles_deg=np.degrees(np.arccos(cos)), cosines=cos)


def read_correlation(path) -> CorrelationMatrix:
    """Read a correlation matrix from a plain-text K x K grid.

    Whitespace- or comma-delimited; an optional first row of phenotype names
    is detected by its first token not parsing as a number.  Lines starting
    with '#' are skipped.
    """
    rows = []
    names = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.replace(",", " ").split()
            if not rows and names is None:
                try:
                    float(tokens[0])
                except ValueError:
                    names = tokens
                    continue
            try:
                rows.append([float(t) for t in tokens])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparseable matrix row: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no matrix rows found")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataError(f"{path}: ragged matrix rows")
    if len(rows) != width:
        raise DataError(f"{path}: matrix is {len(rows)}x{width}, expected square")
    return CorrelationMatrix(np.array(rows), names=names)


def write_correlation(sigma: CorrelationMatrix, path, names=None) -> None:
    """Write a correlation matrix as a text grid, with an optional header row."""
    names = names if names is not None else sigma.names
    with open(path, "w", encoding="utf-8") as fh:
        if names is not None:
            fh.write("\t".join(str(n) for n in names) + "\n")
        for row in sigma.entries:
            fh.write("\t".join(f"{v:.9g}" for v in row) + "\n")
