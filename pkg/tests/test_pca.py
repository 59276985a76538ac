import numpy as np
import pytest

from src.linalg import pca
from src.linalg.pca import PcaBasis, fit
from src.utils.error_handler import ArgumentError, DegenerateDataError


class TestFit:
    def test_orthonormal_components(self, anisotropic_basis):
        P = anisotropic_basis.P
        np.testing.assert_allclose(P.T @ P, np.eye(8), atol=1e-10)

    def test_sigma_non_increasing(self, anisotropic_basis):
        assert np.all(np.diff(anisotropic_basis.sigma) <= 0)

    def test_population_variance(self, anisotropic_data, anisotropic_basis):
        np.testing.assert_allclose((anisotropic_basis.sigma ** 2).sum(), anisotropic_data.var(axis=1).sum())
        np.testing.assert_allclose(anisotropic_basis.mu, anisotropic_data.mean(axis=1))

    def test_leading_direction_follows_the_widest_axis(self, anisotropic_basis):
        assert anisotropic_basis.P[0, 0] > 0.99

    def test_sign_convention(self, anisotropic_basis):
        P = anisotropic_basis.P
        pivots = np.argmax(np.abs(P), axis=0)
        assert np.all(P[pivots, np.arange(P.shape[1])] > 0)

    def test_chunked_accumulation_matches_direct_covariance(self, anisotropic_data, monkeypatch):
        monkeypatch.setattr(pca, 'CHUNK_SIZE', 7)
        basis = fit(anisotropic_data)
        cov = np.cov(anisotropic_data, bias=True)
        np.testing.assert_allclose(basis.P @ np.diag(basis.sigma ** 2) @ basis.P.T, cov, atol=1e-12)

    def test_float32_input(self, anisotropic_data):
        basis = fit(anisotropic_data.astype(np.float32))
        assert basis.P.dtype == np.float64
        assert basis.n_fitted == 200

    def test_needs_two_samples(self):
        with pytest.raises(ArgumentError):
            fit(np.zeros((3, 1)))

    def test_constant_data_has_zero_sigma(self):
        basis = fit(np.full((3, 10), 0.4))
        np.testing.assert_array_equal(basis.sigma, 0.0)


class TestCoordinates:
    def test_coordinates_are_centered(self, anisotropic_basis):
        np.testing.assert_allclose(anisotropic_basis.to_coords(anisotropic_basis.mu), 0.0, atol=1e-12)

    def test_inverse_on_vectors_and_matrices(self, anisotropic_data, anisotropic_basis):
        x = anisotropic_data[:, 5]
        np.testing.assert_allclose(anisotropic_basis.from_coords(anisotropic_basis.to_coords(x)), x, atol=1e-12)
        block = anisotropic_data[:, :20]
        np.testing.assert_allclose(anisotropic_basis.from_coords(anisotropic_basis.to_coords(block)), block,
                                   atol=1e-12)

    def test_starred_variances_match_sigma(self, anisotropic_data, anisotropic_basis):
        stars = anisotropic_basis.to_coords(anisotropic_data)
        np.testing.assert_allclose(stars.std(axis=1), anisotropic_basis.sigma, atol=1e-10)

    def test_dimension_mismatch(self, anisotropic_basis):
        with pytest.raises(ArgumentError):
            anisotropic_basis.to_coords(np.zeros(5))


class TestTail:
    @staticmethod
    def _basis():
        return PcaBasis(np.eye(4), np.array([2.0, 1.0, 0.1, 0.1]), np.zeros(4), 10)

    def test_smallest_suffix_holding_the_fraction(self):
        basis = self._basis()
        assert basis.tail_components(0.001).shape == (4, 1)
        assert basis.tail_components(0.003).shape == (4, 2)
        np.testing.assert_array_equal(basis.tail_components(0.003), np.eye(4)[:, 2:])

    def test_projector_is_idempotent(self, anisotropic_basis):
        projector = anisotropic_basis.tail_projector(0.005)
        np.testing.assert_allclose(projector @ projector, projector, atol=1e-12)

    def test_fraction_bounds(self):
        with pytest.raises(ArgumentError):
            self._basis().tail_components(1.0)

    def test_all_zero_variance(self):
        basis = PcaBasis(np.eye(2), np.zeros(2), np.zeros(2), 3)
        with pytest.raises(DegenerateDataError):
            basis.tail_components(0.1)

    def test_last_component(self, anisotropic_basis):
        np.testing.assert_array_equal(anisotropic_basis.last_component, anisotropic_basis.P[:, -1])

    def test_explained_variance_ratio_sums_to_one(self, anisotropic_basis):
        np.testing.assert_allclose(anisotropic_basis.explained_variance_ratio.sum(), 1.0)


def test_save_and_load(tmp_path, anisotropic_basis):
    loaded = PcaBasis.load(anisotropic_basis.save(tmp_path / 'basis'))
    assert loaded.n_fitted == anisotropic_basis.n_fitted
    np.testing.assert_allclose(loaded.P, anisotropic_basis.P, atol=1e-6)
    np.testing.assert_allclose(loaded.sigma, anisotropic_basis.sigma, rtol=1e-6)
