"""Unit tests for the quantum linear-algebra core."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rydtomo import qcore


def random_density(rng, dim, rank=None):
    rank = rank or dim
    block = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = block @ block.conj().T
    return rho / np.trace(rho)


class TestPauliBasis:
    def test_single_qubit_elements(self):
        basis = qcore.pauli_basis(1)
        assert basis.shape == (4, 2, 2)
        np.testing.assert_array_equal(basis[0], np.eye(2))
        np.testing.assert_array_equal(basis[1], qcore.PAULI_X)
        np.testing.assert_array_equal(basis[2], qcore.PAULI_Y)
        np.testing.assert_array_equal(basis[3], qcore.PAULI_Z)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_gram_orthogonality(self, n):
        basis = qcore.pauli_basis(n)
        gram = np.einsum("ixy,jyx->ij", basis, basis)
        np.testing.assert_allclose(gram, 2**n * np.eye(4**n), atol=1e-10)

    def test_two_qubit_normalization(self):
        basis = qcore.pauli_basis(2)
        assert len(basis) == 16
        assert np.trace(basis[5] @ basis[5]).real == pytest.approx(4.0)

    def test_hermitian(self):
        basis = qcore.pauli_basis(2)
        for op in basis:
            np.testing.assert_allclose(op, op.conj().T, atol=1e-14)

    @pytest.mark.parametrize("n", [0, 9])
    def test_size_errors(self, n):
        with pytest.raises(ValueError, match="qubit count"):
            qcore.pauli_basis(n)


class TestTensor:
    def test_identity(self):
        np.testing.assert_array_equal(qcore.tensor(np.eye(2), np.eye(2)), np.eye(4))

    def test_sigma_x_with_projector(self):
        result = qcore.tensor(qcore.PAULI_X, qcore.basis_state(0, 2))
        expected = np.zeros((4, 4), dtype=complex)
        expected[2, 0] = expected[0, 2] = 1.0
        np.testing.assert_array_equal(result, expected)

    def test_sigma_z_pair(self):
        np.testing.assert_array_equal(qcore.tensor(qcore.PAULI_Z, qcore.PAULI_Z),
                                      np.diag([1.0, -1.0, -1.0, 1.0]))

    def test_dimension_budget(self):
        big = np.eye(2**5)
        with pytest.raises(ValueError, match="exceeds"):
            qcore.tensor(big, big)


class TestPartialTrace:
    def test_product_state(self):
        rng = np.random.default_rng(0)
        rho = random_density(rng, 4)
        anc = qcore.basis_state(0, 2)
        joint = qcore.tensor(rho, anc)
        np.testing.assert_allclose(qcore.partial_trace(joint, [0, 1], [2, 2, 2]), rho,
                                   atol=1e-12)

    def test_bell_marginal(self):
        vec = np.zeros(4, dtype=complex)
        vec[1] = vec[2] = 1 / np.sqrt(2)
        bell = np.outer(vec, vec.conj())
        reduced = qcore.partial_trace(bell, [0], [2, 2])
        np.testing.assert_allclose(reduced, np.eye(2) / 2, atol=1e-12)

    def test_traced_haar_state_full_rank(self):
        # A random pure state traced over an auxiliary factor at least as
        # large as the kept system is almost surely full rank; one auxiliary
        # qubit saturates this only for a single system qubit (rank <= 2).
        rng = np.random.default_rng(7)
        for n_keep in (1, 2):
            dim = 2**n_keep
            vec = rng.normal(size=dim * dim) + 1j * rng.normal(size=dim * dim)
            vec /= np.linalg.norm(vec)
            rho = qcore.partial_trace(np.outer(vec, vec.conj()), list(range(n_keep)),
                                      [2] * n_keep + [dim])
            assert np.linalg.eigvalsh(rho).min() > 1e-6
        vec = rng.normal(size=8) + 1j * rng.normal(size=8)
        vec /= np.linalg.norm(vec)
        rank2 = qcore.partial_trace(np.outer(vec, vec.conj()), [0, 1], [2, 2, 2])
        assert np.linalg.matrix_rank(rank2, tol=1e-10) == 2

    def test_trace_preserved(self):
        rng = np.random.default_rng(3)
        joint = random_density(rng, 8)
        reduced = qcore.partial_trace(joint, [1], [2, 2, 2])
        assert np.trace(reduced).real == pytest.approx(1.0, abs=1e-12)

    def test_shape_error(self):
        with pytest.raises(ValueError, match="inconsistent"):
            qcore.partial_trace(np.eye(6), [0], [2, 2, 2])


class TestFidelityAndTraceDistance:
    def test_self_fidelity(self):
        rng = np.random.default_rng(1)
        rho = random_density(rng, 4)
        assert qcore.fidelity(rho, rho) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_pure_states(self):
        assert qcore.fidelity(qcore.basis_state(0, 2), qcore.basis_state(1, 2)) == \
            pytest.approx(0.0, abs=1e-9)

    def test_pure_vs_maximally_mixed(self):
        value = qcore.fidelity(qcore.basis_state(0, 2), np.eye(2) / 2)
        assert value == pytest.approx(1 / np.sqrt(2), abs=1e-10)

    def test_non_psd_rejected(self):
        bad = np.diag([1.5, -0.5]).astype(complex)
        with pytest.raises(ValueError, match="not PSD"):
            qcore.fidelity(bad, np.eye(2) / 2)

    def test_trace_distance_examples(self):
        rho = qcore.basis_state(0, 2)
        sigma = qcore.basis_state(1, 2)
        assert qcore.trace_distance(rho, rho) == pytest.approx(0.0, abs=1e-12)
        assert qcore.trace_distance(rho, sigma) == pytest.approx(1.0, abs=1e-12)
        assert qcore.trace_distance(rho, np.eye(2) / 2) == pytest.approx(0.5, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([2, 4, 8]))
    def test_fidelity_symmetry(self, seed, dim):
        rng = np.random.default_rng(seed)
        rho, sigma = random_density(rng, dim), random_density(rng, dim)
        assert abs(qcore.fidelity(rho, sigma) - qcore.fidelity(sigma, rho)) <= 1e-9

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([2, 4]))
    def test_fuchs_van_de_graaf(self, seed, dim):
        rng = np.random.default_rng(seed)
        rho, sigma = random_density(rng, dim), random_density(rng, dim)
        fid = qcore.fidelity(rho, sigma)
        dist = qcore.trace_distance(rho, sigma)
        assert 1 - fid <= dist + 1e-8
        assert dist <= np.sqrt(1 - fid**2) + 1e-8


class TestHermitianEig:
    def test_sigma_z(self):
        values, _ = qcore.hermitian_eig(qcore.PAULI_Z)
        np.testing.assert_allclose(values, [-1.0, 1.0], atol=1e-12)

    def test_sigma_x_eigenvectors(self):
        values, vectors = qcore.hermitian_eig(qcore.PAULI_X)
        np.testing.assert_allclose(values, [-1.0, 1.0], atol=1e-12)
        minus, plus = vectors[:, 0], vectors[:, 1]
        for vec, sign in ((minus, -1.0), (plus, 1.0)):
            np.testing.assert_allclose(np.abs(vec), [1 / np.sqrt(2)] * 2, atol=1e-12)
            np.testing.assert_allclose(qcore.PAULI_X @ vec, sign * vec, atol=1e-12)

    def test_round_trip_random(self):
        rng = np.random.default_rng(5)
        mat = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        mat = mat + mat.conj().T
        values, vectors = qcore.hermitian_eig(mat)
        rebuilt = (vectors * values) @ vectors.conj().T
        assert np.abs(rebuilt - mat).max() <= 1e-10 * np.abs(mat).max()
        assert np.all(np.diff(values) >= 0)

    def test_non_hermitian_rejected(self):
        with pytest.raises(ValueError, match="Hermitian"):
            qcore.hermitian_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestPsdProjection:
    def test_clips_and_renormalizes(self):
        rho = np.diag([1.2, -0.2]).astype(complex)
        projected = qcore.psd_project(rho)
        np.testing.assert_allclose(projected, np.diag([1.0, 0.0]), atol=1e-12)
        assert np.trace(projected).real == pytest.approx(1.0, abs=1e-12)

    def test_noop_on_valid_state(self):
        rng = np.random.default_rng(11)
        rho = random_density(rng, 4)
        np.testing.assert_allclose(qcore.psd_project(rho), rho, atol=1e-10)


class TestBasisCoefficients:
    def test_round_trip(self):
        rng = np.random.default_rng(2)
        basis = qcore.pauli_basis(2)
        rho = random_density(rng, 4)
        coeffs = qcore.pauli_coefficients(rho, basis)
        np.testing.assert_allclose(qcore.matrix_from_coefficients(coeffs, basis), rho,
                                   atol=1e-12)

    def test_maximally_mixed_is_identity_component(self):
        basis = qcore.pauli_basis(2)
        coeffs = qcore.pauli_coefficients(np.eye(4) / 4, basis)
        np.testing.assert_allclose(coeffs, [0.25] + [0.0] * 15, atol=1e-14)

    def test_density_matrix_validation(self):
        qcore.check_density_matrix(np.eye(2) / 2)
        with pytest.raises(ValueError, match="trace"):
            qcore.check_density_matrix(np.eye(2))
        with pytest.raises(ValueError, match="Hermitian"):
            qcore.check_density_matrix(np.array([[0.5, 0.5], [0.0, 0.5]]))
        with pytest.raises(ValueError, match="negative eigenvalue"):
            qcore.check_density_matrix(np.diag([1.5, -0.5]))
