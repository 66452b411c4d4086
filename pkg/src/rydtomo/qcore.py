"""Dense quantum-information primitives shared by the whole toolkit.

States and operators are plain complex numpy arrays. Bit ordering is fixed
throughout the package: qubit 0 is the most significant bit of a basis-state
index, and system qubits always precede ancilla qubits in the tensor order,
so the joint index of (system x, ancilla a) is x * 2**n_ancilla + a.
"""

from __future__ import annotations

from itertools import product

import numpy as np

MAX_DIM = 2**9
"""Largest supported Hilbert-space dimension (dense desk-scale budget)."""

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
NUMBER_OP = np.array([[0, 0], [0, 1]], dtype=complex)

_PAULIS = (PAULI_I, PAULI_X, PAULI_Y, PAULI_Z)


def pauli_basis(n_qubits: int) -> np.ndarray:
    """Return all n-fold Pauli tensor products, stacked as a (4**n, d, d) array.

    Elements are ordered lexicographically by factor index (I, X, Y, Z per
    qubit, qubit 0 varying slowest), so element 0 is the identity. They are
    Hermitian and mutually orthogonal with tr(O_i O_j) = 2**n * delta_ij.
    """
    if not 1 <= n_qubits <= 8:
        raise ValueError(f"qubit count must be in [1, 8], got {n_qubits}")
    dim = 2**n_qubits
    basis = np.empty((4**n_qubits, dim, dim), dtype=complex)
    for i, factors in enumerate(product(_PAULIS, repeat=n_qubits)):
        op = factors[0]
        for factor in factors[1:]:
            op = np.kron(op, factor)
        basis[i] = op
    return basis


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with the package-wide dimension budget enforced."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[0] * b.shape[0] > MAX_DIM:
        raise ValueError(
            f"tensor product dimension {a.shape[0] * b.shape[0]} exceeds "
            f"the supported maximum {MAX_DIM}"
        )
    return np.kron(a, b)


def basis_state(index: int, dim: int) -> np.ndarray:
    """Pure computational-basis density matrix |index><index| of size dim."""
    if not 0 <= index < dim:
        raise ValueError(f"basis index {index} out of range for dimension {dim}")
    rho = np.zeros((dim, dim), dtype=complex)
    rho[index, index] = 1.0
    return rho


def partial_trace(rho: np.ndarray, keep: "list[int] | tuple[int, ...]",
                  dims: "list[int] | tuple[int, ...]") -> np.ndarray:
    """Trace out all subsystems not listed in ``keep``.

    Args:
        rho: square matrix over the full tensor-product space.
        keep: indices of the subsystems to retain, in their original order.
        dims: dimension of each subsystem; their product must match rho.

    Returns:
        The reduced matrix over the kept subsystems.
    """
    rho = np.asarray(rho)
    dims = list(dims)
    total = int(np.prod(dims))
    if rho.shape != (total, total):
        raise ValueError(f"shape {rho.shape} inconsistent with subsystem dims {dims}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {len(dims)} subsystems")
    if not keep:
        raise ValueError("cannot trace out every subsystem")

    reshaped = rho.reshape(dims + dims)
    n = len(dims)
    traced = 0
    for idx in range(n):
        if idx in keep:
            continue
        axis = idx - traced
        reshaped = np.trace(reshaped, axis1=axis, axis2=axis + n - traced)
        traced += 1
    kept_dim = int(np.prod([dims[k] for k in keep]))
    return reshaped.reshape(kept_dim, kept_dim)


def hermitian_eig(matrix: np.ndarray, atol: float = 1e-10) -> "tuple[np.ndarray, np.ndarray]":
    """Eigendecomposition of a Hermitian matrix.

    Returns eigenvalues in ascending order and the unitary of column
    eigenvectors. Raises if the input deviates from Hermiticity by more than
    ``atol`` relative to its magnitude.
    """
    matrix = np.asarray(matrix)
    scale = max(1.0, float(np.abs(matrix).max(initial=0.0)))
    if np.abs(matrix - matrix.conj().T).max(initial=0.0) > atol * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    return eigenvalues, eigenvectors


def psd_sqrt(rho: np.ndarray) -> np.ndarray:
    """Matrix square root of a (numerically) PSD Hermitian matrix.

    Eigenvalues below zero are clipped before the square root; this is the
    standard projection for reconstruction noise on the PSD cone.
    """
    eigenvalues, eigenvectors = hermitian_eig(rho)
    clipped = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (eigenvectors * clipped) @ eigenvectors.conj().T


def psd_project(rho: np.ndarray) -> np.ndarray:
    """Project onto the physical cone: clip negative eigenvalues, renormalize trace.

    Explicitly separate from the linear inversion, which must stay inspectable
    including any PSD violation.
    """
    eigenvalues, eigenvectors = hermitian_eig(rho)
    clipped = np.clip(eigenvalues, 0.0, None)
    total = clipped.sum()
    if total <= 0:
        raise ValueError("matrix has no positive spectral weight to project onto")
    projected = (eigenvectors * (clipped / total)) @ eigenvectors.conj().T
    return 0.5 * (projected + projected.conj().T)


def fidelity(rho: np.ndarray, sigma: np.ndarray, psd_atol: float = 1e-8) -> float:
    """Uhlmann fidelity tr sqrt(sqrt(rho) sigma sqrt(rho)) of two density matrices.

    Square-root (not squared) convention. Inputs must be PSD within
    ``psd_atol``; the result is clamped to [0, 1] against numerical noise.
    """
    rho = np.asarray(rho)
    sigma = np.asarray(sigma)
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    for name, mat in (("rho", rho), ("sigma", sigma)):
        low = float(np.linalg.eigvalsh(0.5 * (mat + mat.conj().T)).min())
        if low < -psd_atol:
            raise ValueError(f"{name} is not PSD within tolerance (min eigenvalue {low:.3e})")
    root = psd_sqrt(rho)
    inner = root @ sigma @ root
    eigenvalues = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    value = float(np.sqrt(np.clip(eigenvalues, 0.0, None)).sum())
    return min(1.0, max(0.0, value))


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Trace distance 0.5 * tr|rho - sigma| via the Hermitian difference spectrum."""
    rho = np.asarray(rho)
    sigma = np.asarray(sigma)
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    diff = rho - sigma
    eigenvalues = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))
    return float(0.5 * np.abs(eigenvalues).sum())


def check_density_matrix(rho: np.ndarray, herm_atol: float = 1e-10,
                         trace_atol: float = 1e-10, psd_atol: float = 1e-10) -> np.ndarray:
    """Validate Hermiticity, unit trace, and positivity; return rho unchanged."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    if np.abs(rho - rho.conj().T).max() > herm_atol:
        raise ValueError("density matrix is not Hermitian within tolerance")
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > trace_atol:
        raise ValueError(f"density matrix trace {tr} deviates from 1")
    low = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
    if low < -psd_atol:
        raise ValueError(f"density matrix has negative eigenvalue {low:.3e}")
    return rho


def pauli_coefficients(rho: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Expansion coefficients of a Hermitian matrix in a stacked Pauli basis.

    With the tr(O_i O_j) = 2**n delta_ij normalization the coefficient of
    O_i is tr(O_i rho) / 2**n. Coefficients of a Hermitian matrix are real;
    the imaginary residue is discarded.
    """
    dim = rho.shape[0]
    return np.einsum("ixy,yx->i", basis, rho, optimize=True).real / dim


def matrix_from_coefficients(coeffs: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pauli_coefficients`: assemble sum_i c_i O_i."""
    return np.einsum("i,ixy->xy", np.asarray(coeffs, dtype=float), basis, optimize=True)
