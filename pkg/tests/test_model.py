import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcassoc import (
    CorrelationMatrix,
    DataError,
    SignalVector,
    ZVector,
    principal_angles,
    project_pcs,
    random_correlation,
    read_correlation,
    spectral_decompose,
    write_correlation,
    Seed,
)
from pcassoc.model import TestReport

from conftest import SIGMA_UNK3_ENTRIES

SIGMA_UNK8 = np.array(
    [[1.00, -0.02, -0.04, -0.20, 0.05, 0.16, -0.01, -0.03],
     [-0.02, 1.00, 0.20, -0.02, 0.01, 0.05, 0.03, 0.08],
     [-0.04, 0.20, 1.00, -0.11, 0.03, 0.15, 0.12, 0.08],
     [-0.20, -0.02, -0.11, 1.00, -0.09, -0.42, -0.11, 0.00],
     [0.05, 0.01, 0.03, -0.09, 1.00, 0.24, 0.06, 0.00],
     [0.16, 0.05, 0.15, -0.42, 0.24, 1.00, 0.15, 0.07],
     [-0.01, 0.03, 0.12, -0.11, 0.06, 0.15, 1.00, 0.06],
     [-0.03, 0.08, 0.08, 0.00, 0.00, 0.07, 0.06, 1.00]]
)


class TestCorrelationMatrix:
    def test_identity_accepted(self):
        m = CorrelationMatrix.identity(4)
        assert m.dim == 4
        assert np.array_equal(m.entries, np.eye(4))

    def test_rejects_asymmetry(self):
        bad = np.eye(3)
        bad[0, 1] = 0.2
        with pytest.raises(DataError, match="asymmetry"):
            CorrelationMatrix(bad)

    def test_symmetrizes_tiny_asymmetry(self):
        m = SIGMA_UNK3_ENTRIES.copy()
        m[0, 1] += 5e-13
        got = CorrelationMatrix(m)
        assert got.entries[0, 1] == got.entries[1, 0]

    def test_rejects_non_positive_definite(self):
        bad = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
        with pytest.raises(DataError, match="eigenvalue"):
            CorrelationMatrix(bad)

    def test_rejects_bad_diagonal(self):
        bad = np.eye(2) * 1.5
        with pytest.raises(DataError, match="diagonal"):
            CorrelationMatrix(bad)

    def test_rejects_out_of_range_offdiagonal(self):
        bad = np.array([[1.0, 1.2], [1.2, 1.0]])
        with pytest.raises(DataError):
            CorrelationMatrix(bad)

    def test_rejects_near_singular_by_default(self):
        r = 1 - 1e-12
        bad = np.array([[1.0, r], [r, 1.0]])
        with pytest.raises(DataError, match="singular"):
            CorrelationMatrix(bad)
        relaxed = CorrelationMatrix(bad, min_eig_ratio=0.0)
        assert relaxed.dim == 2

    def test_entries_are_readonly(self, sigma3):
        with pytest.raises(ValueError):
            sigma3.entries[0, 0] = 2.0


class TestSpectralDecompose:
    def test_identity_case(self):
        eig = spectral_decompose(CorrelationMatrix.identity(3))
        assert np.allclose(eig.eigenvalues, 1.0)
        assert np.array_equal(eig.eigenvectors, np.eye(3))

    def test_bivariate_rho06(self, sigma_rho06):
        eig = spectral_decompose(sigma_rho06)
        assert eig.eigenvalues == pytest.approx([1.6, 0.4], abs=1e-12)
        s = 1 / np.sqrt(2)
        assert eig.eigenvectors[:, 0] == pytest.approx([s, s], abs=1e-4)
        assert eig.eigenvectors[:, 1] == pytest.approx([-s, s], abs=1e-4)

    def test_mets_matrix_eigenvalues(self):
        eig = spectral_decompose(CorrelationMatrix(SIGMA_UNK8))
        published = [1.75, 1.26, 0.99, 0.95, 0.94, 0.82, 0.75, 0.54]
        assert np.round(eig.eigenvalues, 2) == pytest.approx(published)

    def test_reconstruction_and_orthonormality_large(self):
        sigma = random_correlation(200, Seed(2024))
        eig = spectral_decompose(sigma)
        recon = (eig.eigenvectors * eig.eigenvalues) @ eig.eigenvectors.T
        assert np.max(np.abs(recon - sigma.entries)) < 1e-10
        gram = eig.eigenvectors.T @ eig.eigenvectors
        assert np.max(np.abs(gram - np.eye(200))) < 1e-10

    def test_deterministic_bit_identical(self, sigma3):
        a = spectral_decompose(sigma3)
        b = spectral_decompose(sigma3)
        assert np.array_equal(a.eigenvalues, b.eigenvalues)
        assert np.array_equal(a.eigenvectors, b.eigenvectors)

    def test_unit_determinant_magnitude(self, sigma3):
        eig = spectral_decompose(sigma3)
        assert abs(abs(np.linalg.det(eig.eigenvectors)) - 1.0) < 1e-10


class TestProjectPcs:
    def test_identity_projection(self):
        eig = spectral_decompose(CorrelationMatrix.identity(3))
        z = np.array([0.3, -1.2, 2.0])
        assert np.allclose(project_pcs(z, eig), z)

    def test_rho06_ones(self, sigma_rho06):
        eig = spectral_decompose(sigma_rho06)
        assert project_pcs(np.array([1.0, 1.0]), eig) == pytest.approx(
            [np.sqrt(2), 0.0], abs=1e-12
        )

    def test_rho06_along_first_axis(self, sigma_rho06):
        eig = spectral_decompose(sigma_rho06)
        assert project_pcs(np.array([2.0, 0.0]), eig) == pytest.approx(
            [np.sqrt(2), -np.sqrt(2)], abs=1e-12
        )

    def test_dimension_mismatch(self, sigma_rho06):
        eig = spectral_decompose(sigma_rho06)
        with pytest.raises(DataError):
            project_pcs(np.array([1.0, 2.0, 3.0]), eig)

    def test_accepts_zvector(self, sigma_rho06):
        eig = spectral_decompose(sigma_rho06)
        zv = ZVector(np.array([1.0, 1.0]), snp_id="rs1")
        assert project_pcs(zv, eig)[0] == pytest.approx(np.sqrt(2))


class TestPrincipalAngles:
    def test_aligned_with_first_eigenvector(self, sigma3):
        eig = spectral_decompose(sigma3)
        beta = SignalVector(2.5 * eig.eigenvectors[:, 0])
        ang = principal_angles(beta, eig)
        assert ang.angles_deg[0] == pytest.approx(0.0, abs=1e-6)
        assert ang.angles_deg[1:] == pytest.approx([90.0, 90.0], abs=1e-6)

    def test_bivariate_equal_split(self, sigma_rho06):
        eig = spectral_decompose(sigma_rho06)
        ang = principal_angles(SignalVector(np.array([0.0, 1.0])), eig)
        assert ang.angles_deg == pytest.approx([45.0, 45.0], abs=1e-9)

    def test_published_m4_angles(self, sigma3):
        eig = spectral_decompose(sigma3)
        ang = principal_angles(SignalVector(np.array([0.94, 0.86, 1.92])), eig)
        assert ang.angles_deg == pytest.approx([54.7, 54.7, 54.7], abs=0.1)

    def test_zero_signal_rejected(self, sigma3):
        eig = spectral_decompose(sigma3)
        with pytest.raises(DataError):
            principal_angles(SignalVector(np.zeros(3)), eig)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 12))
def test_isometry_and_angle_sum_properties(seed, k):
    sigma = random_correlation(k, Seed(seed))
    eig = spectral_decompose(sigma)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(k)
    pc = project_pcs(z, eig)
    assert np.sum(pc * pc) == pytest.approx(np.sum(z * z), abs=1e-10)
    beta = SignalVector(rng.standard_normal(k))
    ang = principal_angles(beta, eig)
    assert np.sum(ang.cosines**2) == pytest.approx(1.0, abs=1e-10)


def test_signal_vector_norm_cached():
    sv = SignalVector(np.array([3.0, 4.0]))
    assert sv.norm == pytest.approx(5.0, abs=1e-12)


def test_test_report_validates_p():
    with pytest.raises(DataError):
        TestReport("WI", 1.0, 1.5)


def test_correlation_text_roundtrip(tmp_path, sigma3):
    path = tmp_path / "sigma.txt"
    write_correlation(sigma3, path, names=("HDL", "TC", "TG"))
    back = read_correlation(path)
    assert back.names == ("HDL", "TC", "TG")
    assert np.max(np.abs(back.entries - sigma3.entries)) < 1e-9


def test_correlation_text_comma_delimited(tmp_path):
    path = tmp_path / "sigma.csv"
    path.write_text("1.0, 0.5\n0.5, 1.0\n")
    got = read_correlation(path)
    assert got.entries[0, 1] == 0.5


def test_correlation_text_rejects_ragged(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1.0 0.5\n0.5\n")
    with pytest.raises(DataError, match="ragged"):
        read_correlation(path)
