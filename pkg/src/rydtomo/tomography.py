"""Measurement-ensemble construction and linear state reconstruction.

The measurement set is generated by entangling the system with ancilla atoms
placed at configurable positions and projecting the joint array onto
computational bitstrings. Stacking the outcome probabilities of every
(arrangement, bitstring) pair evaluated on an orthogonal operator basis
yields a real K x 4**N matrix; full column rank makes the linear inversion
of the system state unique.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import qcore
from .model import (
    AtomGeometry,
    DriveParams,
    NoiseParams,
    blockade_allowed_states,
    build_hamiltonian,
    evolve_lindblad,
    propagator,
)


class UnderdeterminedEnsembleError(RuntimeError):
    """The measurement matrix does not have full column rank."""

    def __init__(self, rank: int, needed: int):
        super().__init__(
            f"measurement matrix rank {rank} < {needed} unknowns; "
            f"add arrangements to complete the ensemble"
        )
        self.rank = rank
        self.needed = needed


@dataclass(frozen=True)
class SpamModel:
    """Per-qubit readout flip probabilities.

    ``p10`` is the probability of reading 1 for a prepared 0; ``p01`` of
    reading 0 for a prepared 1. The corruption acts as a 1->0 decay followed
    by a 0->1 flip, giving the column-stochastic single-qubit matrix
    [[1-p10, p01*(1-p10)], [p10, 1-p01*(1-p10)]] applied to (P0, P1).
    """

    p10: float = 0.0
    p01: float = 0.0

    def __post_init__(self):
        for name, p in (("p10", self.p10), ("p01", self.p01)):
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {p}")

    @property
    def is_ideal(self) -> bool:
        return self.p10 == 0.0 and self.p01 == 0.0

    def confusion_matrix(self) -> np.ndarray:
        keep1 = 1.0 - self.p01 * (1.0 - self.p10)
        return np.array([
            [1.0 - self.p10, self.p01 * (1.0 - self.p10)],
            [self.p10, keep1],
        ])

    def inverse_confusion_matrix(self) -> np.ndarray:
        if self.p10 + self.p01 >= 1.0:
            raise ValueError(
                f"readout model with p10 + p01 = {self.p10 + self.p01} >= 1 is not invertible"
            )
        return np.linalg.inv(self.confusion_matrix())


@dataclass(frozen=True)
class MeasurementRecord:
    """Projective measurement counts per ancilla arrangement.

    ``counts`` has shape (arrangements, 2**n_atoms) and each row sums to the
    corresponding entry of ``shots``.
    """

    counts: np.ndarray
    shots: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        shots = np.asarray(self.shots, dtype=np.int64)
        if counts.ndim != 2 or shots.shape != (counts.shape[0],):
            raise ValueError("counts must be (arrangements, outcomes) with one shot total per row")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if np.any(counts.sum(axis=1) != shots):
            raise ValueError("row sums of counts must equal the shot totals")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "shots", shots)

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.shots[:, None]


@dataclass(frozen=True)
class MeasurementEnsemble:
    """Materialized measurement set over a list of ancilla arrangements.

    ``matrix`` holds, row by row (row index m * 2**n_atoms + n), the outcome
    probability of bitstring n under arrangement m evaluated on each element
    of the operator basis; shape (K, 4**n_system).
    """

    geometries: "list[AtomGeometry]"
    drive: DriveParams
    basis: np.ndarray
    matrix: np.ndarray
    angles: "np.ndarray | None" = None

    @property
    def n_system(self) -> int:
        return self.geometries[0].n_system

    @property
    def n_ancilla(self) -> int:
        return self.geometries[0].n_ancilla

    @property
    def n_arrangements(self) -> int:
        return len(self.geometries)

    @property
    def n_outcomes(self) -> int:
        return 2 ** (self.n_system + self.n_ancilla)

    @property
    def k_rows(self) -> int:
        return self.matrix.shape[0]

    def model_probabilities(self, rho_x: np.ndarray) -> np.ndarray:
        """Outcome distributions (arrangements, outcomes) predicted for rho_x."""
        coeffs = qcore.pauli_coefficients(rho_x, self.basis)
        flat = self.matrix @ coeffs
        return flat.reshape(self.n_arrangements, self.n_outcomes)


def _ancilla_zero_columns(unitary: np.ndarray, n_ancilla: int) -> np.ndarray:
    """Propagator columns for joint states (x, ancillas all in |0>)."""
    return unitary[:, :: 2**n_ancilla] if n_ancilla else unitary


def _validate_entangle_drive(drive: DriveParams):
    if drive.anti_addressed:
        raise ValueError("the entangling drive must not anti-address any atom")


def outcome_distribution(rho_x: np.ndarray, geom: AtomGeometry, drive: DriveParams,
                         noise: "NoiseParams | None" = None,
                         steps: "int | None" = None,
                         blockade_cutoff_um: "float | None" = None) -> np.ndarray:
    """Bitstring probabilities after entangling the system with fresh ancillas.

    The ancillas start in |0...0>, the joint array evolves under the
    entangling drive for its duration, and the diagonal of the joint state is
    returned. With ``noise`` set, the evolution includes dephasing;
    ``blockade_cutoff_um`` then confines it to the blockade-allowed subspace
    (any weight outside the subspace is dropped, so callers should
    renormalize when the input state is not fully supported on it).
    """
    _validate_entangle_drive(drive)
    ham = build_hamiltonian(geom, drive)
    if noise is not None and not noise.is_zero:
        anc = qcore.basis_state(0, 2**geom.n_ancilla) if geom.n_ancilla else np.ones((1, 1))
        joint = qcore.tensor(rho_x, anc) if geom.n_ancilla else np.asarray(rho_x, dtype=complex)
        probs = np.zeros(joint.shape[0])
        if blockade_cutoff_um is not None:
            labels = blockade_allowed_states(geom, blockade_cutoff_um)
            sub = np.ix_(labels, labels)
            evolved = evolve_lindblad(joint[sub], ham[sub], noise, drive.duration_us,
                                      steps=steps, basis_labels=labels,
                                      n_atoms=geom.n_atoms)
            probs[labels] = np.diag(evolved).real
        else:
            evolved = evolve_lindblad(joint, ham, noise, drive.duration_us, steps=steps)
            probs = np.diag(evolved).real
    else:
        reduced = _ancilla_zero_columns(propagator(ham, drive.duration_us), geom.n_ancilla)
        probs = np.einsum("nx,xy,ny->n", reduced, rho_x, reduced.conj(), optimize=True).real
    return np.clip(probs, 0.0, None)


def superoperator_probability(rho_x: np.ndarray, geom: AtomGeometry, drive: DriveParams,
                              bitstring: int) -> float:
    """Probability of one joint bitstring after the ancilla-conditioned evolution."""
    dim = 2 ** (geom.n_system + geom.n_ancilla)
    if not 0 <= bitstring < dim:
        raise ValueError(f"bitstring {bitstring} out of range for {dim} outcomes")
    return float(outcome_distribution(rho_x, geom, drive)[bitstring])


def build_measurement_ensemble(geometries: "list[AtomGeometry]", drive: DriveParams,
                               basis: "np.ndarray | None" = None,
                               angles: "np.ndarray | None" = None,
                               parallelism: int = 1) -> MeasurementEnsemble:
    """Evaluate the measurement set on the operator basis for every arrangement.

    All geometries must share the system positions. The per-arrangement
    blocks are assembled in arrangement order, so the result is bit-identical
    for any parallelism degree.
    """
    if not geometries:
        raise ValueError("at least one arrangement is required")
    _validate_entangle_drive(drive)
    first = geometries[0]
    for geom in geometries[1:]:
        if geom.n_system != first.n_system or not np.array_equal(geom.system, first.system):
            raise ValueError("all arrangements must share the same system positions")
        if geom.n_ancilla != first.n_ancilla:
            raise ValueError("all arrangements must use the same ancilla count")
    if basis is None:
        basis = qcore.pauli_basis(first.n_system)

    def block(geom: AtomGeometry) -> np.ndarray:
        reduced = _ancilla_zero_columns(propagator(build_hamiltonian(geom, drive), drive.duration_us),
                                        geom.n_ancilla)
        values = np.einsum("nx,ixy,ny->ni", reduced, basis, reduced.conj(), optimize=True)
        residue = float(np.abs(values.imag).max())
        if residue > 1e-12:
            raise AssertionError(f"imaginary residue {residue:.2e} in measurement matrix")
        return values.real

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            blocks = list(pool.map(block, geometries))
    else:
        blocks = [block(geom) for geom in geometries]
    matrix = np.vstack(blocks)
    return MeasurementEnsemble(geometries=list(geometries), drive=drive, basis=basis,
                               matrix=matrix, angles=None if angles is None else np.asarray(angles, dtype=float))


def numerical_rank(ensemble: MeasurementEnsemble,
                   tol: "float | None" = None) -> "tuple[int, np.ndarray]":
    """SVD rank of the measurement matrix and its full singular spectrum.

    Default cutoff: max(K, columns) * machine epsilon * largest singular value.
    """
    singular = np.linalg.svd(ensemble.matrix, compute_uv=False)
    if tol is None:
        tol = max(ensemble.matrix.shape) * np.finfo(float).eps * float(singular[0])
    return int(np.count_nonzero(singular > tol)), singular


def least_squares_reconstruct(ensemble: MeasurementEnsemble,
                              probabilities: np.ndarray) -> "tuple[np.ndarray, np.ndarray]":
    """Pseudoinverse solve of the linear measurement system.

    Returns the basis coefficients and the reconstructed matrix. The latter is
    Hermitian by construction (real coefficients over Hermitian basis
    elements) but may fail positivity; it is returned uncorrected so the
    violation stays inspectable (see :func:`rydtomo.qcore.psd_project`).
    """
    probabilities = np.asarray(probabilities, dtype=float).reshape(-1)
    if probabilities.shape[0] != ensemble.k_rows:
        raise ValueError(
            f"probability vector length {probabilities.shape[0]} != matrix rows {ensemble.k_rows}"
        )
    n_params = ensemble.matrix.shape[1]
    u, singular, vt = np.linalg.svd(ensemble.matrix, full_matrices=False)
    cutoff = max(ensemble.matrix.shape) * np.finfo(float).eps * float(singular[0])
    rank = int(np.count_nonzero(singular > cutoff))
    if rank < n_params:
        raise UnderdeterminedEnsembleError(rank, n_params)
    coeffs = vt.T @ ((u.T @ probabilities) / singular)
    rho_raw = qcore.matrix_from_coefficients(coeffs, ensemble.basis)
    return coeffs, rho_raw


def _apply_single_qubit_map(distribution: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Apply one 2x2 map to every qubit axis of a joint distribution."""
    n_atoms = int(np.log2(distribution.shape[-1]))
    work = distribution.reshape((2,) * n_atoms)
    for axis in range(n_atoms):
        work = np.moveaxis(np.tensordot(matrix, work, axes=([1], [axis])), 0, axis)
    return work.reshape(-1)


def corrupt_distribution(distribution: np.ndarray, spam: SpamModel) -> np.ndarray:
    """Forward readout corruption: per-qubit confusion matrix on all measured atoms."""
    corrupted = _apply_single_qubit_map(np.asarray(distribution, dtype=float),
                                        spam.confusion_matrix())
    if corrupted.min() < -1e-9:
        raise RuntimeError(
            f"corrupted distribution has negative entry {corrupted.min():.3e}; "
            "this cannot happen for a valid readout model"
        )
    corrupted = np.clip(corrupted, 0.0, None)
    return corrupted / corrupted.sum()


def sample_record(probabilities: np.ndarray, shots: "int | np.ndarray",
                  spam: SpamModel, seed: int) -> MeasurementRecord:
    """Draw multinomial counts from readout-corrupted outcome distributions.

    Args:
        probabilities: ideal distributions, shape (arrangements, outcomes),
            each row summing to 1 within 1e-9.
        shots: shot count per arrangement (scalar or per-arrangement array).
        spam: readout flip model applied to every measured atom.
        seed: RNG seed; sampling is deterministic for a fixed seed.
    """
    probabilities = np.atleast_2d(np.asarray(probabilities, dtype=float))
    sums = probabilities.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-9:
        raise ValueError("each arrangement distribution must sum to 1 within 1e-9")
    shots = np.broadcast_to(np.asarray(shots, dtype=np.int64), (probabilities.shape[0],))
    rng = np.random.Generator(np.random.PCG64(seed))
    counts = np.empty_like(probabilities, dtype=np.int64)
    for m, row in enumerate(probabilities):
        corrupted = corrupt_distribution(row / sums[m], spam)
        counts[m] = rng.multinomial(int(shots[m]), corrupted)
    return MeasurementRecord(counts=counts, shots=shots.copy())


@dataclass(frozen=True)
class SpamCorrection:
    """SPAM-corrected frequency vectors plus the L1 moved by negativity clipping."""

    probabilities: np.ndarray
    clip_l1: np.ndarray


def correct_distribution(distribution: np.ndarray, spam: SpamModel) -> "tuple[np.ndarray, float]":
    """Exact inverse of :func:`corrupt_distribution` on one frequency vector.

    Negative entries produced by statistical noise are clipped to zero and the
    vector renormalized; the pre-clip L1 change is returned as a diagnostic.
    """
    raw = _apply_single_qubit_map(np.asarray(distribution, dtype=float),
                                  spam.inverse_confusion_matrix())
    clipped = np.clip(raw, 0.0, None)
    return clipped / clipped.sum(), float(np.abs(raw - clipped).sum())


def spam_correct(record: MeasurementRecord, spam: SpamModel) -> SpamCorrection:
    """Invert the readout corruption on the record's empirical frequencies."""
    corrected = np.empty(record.counts.shape, dtype=float)
    clip_l1 = np.empty(record.counts.shape[0], dtype=float)
    for m, freq in enumerate(record.frequencies):
        corrected[m], clip_l1[m] = correct_distribution(freq, spam)
    return SpamCorrection(probabilities=corrected, clip_l1=clip_l1)


def row_independence_diagnostic(ensemble: MeasurementEnsemble, bitstring: int,
                                pairs: "list[tuple[int, int]]") -> "list[float]":
    """Euclidean distance between matrix rows of one bitstring across arrangements.

    A vanishing distance means the two arrangements contribute redundant
    measurement information for that outcome.
    """
    if not 0 <= bitstring < ensemble.n_outcomes:
        raise ValueError(f"bitstring {bitstring} out of range")
    norms = []
    for first, second in pairs:
        row_a = ensemble.matrix[first * ensemble.n_outcomes + bitstring]
        row_b = ensemble.matrix[second * ensemble.n_outcomes + bitstring]
        norms.append(float(np.linalg.norm(row_b - row_a)))
    return norms


def target_state(kind: str, n_qubits: int) -> np.ndarray:
    """Analytic target state: the symmetric Bell state or the N-qubit W state."""
    if kind == "bell":
        if n_qubits != 2:
            raise ValueError("the Bell target is defined for exactly 2 qubits")
        vec = np.zeros(4, dtype=complex)
        vec[0b01] = vec[0b10] = 1.0 / np.sqrt(2.0)
    elif kind == "w":
        if n_qubits < 1:
            raise ValueError("the W target needs at least 1 qubit")
        vec = np.zeros(2**n_qubits, dtype=complex)
        for k in range(n_qubits):
            vec[1 << (n_qubits - 1 - k)] = 1.0 / np.sqrt(n_qubits)
    else:
        raise ValueError(f"unknown target state kind {kind!r}")
    return np.outer(vec, vec.conj())


RECORD_SCHEMA = {
    "type": "object",
    "required": ["arrangements", "meta"],
    "properties": {
        "arrangements": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["geometry", "shots", "counts"],
                "properties": {
                    "geometry": {
                        "type": "object",
                        "required": ["system", "ancilla"],
                        "properties": {
                            "system": {"type": "array"},
                            "ancilla": {"type": "array"},
                        },
                    },
                    "shots": {"type": "integer", "minimum": 0},
                    "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                },
            },
        },
        "meta": {
            "type": "object",
            "required": ["seed", "spam", "drive"],
            "properties": {
                "seed": {"type": ["integer", "null"]},
                "spam": {
                    "type": "object",
                    "required": ["p10", "p01"],
                    "properties": {"p10": {"type": "number"}, "p01": {"type": "number"}},
                },
                "drive": {"type": "object"},
            },
        },
    },
}


def record_to_dict(record: MeasurementRecord, geometries: "list[AtomGeometry]",
                   drive: DriveParams, spam: SpamModel, seed: "int | None") -> dict:
    """JSON-ready form of a measurement record with its provenance."""
    if len(geometries) != record.counts.shape[0]:
        raise ValueError("one geometry per arrangement is required")
    return {
        "arrangements": [
            {
                "geometry": {
                    "system": geom.system.tolist(),
                    "ancilla": geom.ancilla.tolist(),
                },
                "shots": int(record.shots[m]),
                "counts": record.counts[m].tolist(),
            }
            for m, geom in enumerate(geometries)
        ],
        "meta": {
            "seed": seed,
            "spam": {"p10": spam.p10, "p01": spam.p01},
            "drive": {
                "rabi_mhz": drive.rabi_mhz,
                "detuning_mhz": drive.detuning_mhz,
                "c6": drive.c6,
                "duration_us": drive.duration_us,
            },
        },
    }


def record_from_dict(payload: dict) -> "tuple[MeasurementRecord, list[AtomGeometry]]":
    """Parse and validate a serialized measurement record."""
    import jsonschema

    jsonschema.validate(payload, RECORD_SCHEMA)
    counts = np.array([arr["counts"] for arr in payload["arrangements"]], dtype=np.int64)
    shots = np.array([arr["shots"] for arr in payload["arrangements"]], dtype=np.int64)
    geometries = [
        AtomGeometry(system=np.asarray(arr["geometry"]["system"], dtype=float),
                     ancilla=np.asarray(arr["geometry"]["ancilla"], dtype=float))
        for arr in payload["arrangements"]
    ]
    return MeasurementRecord(counts=counts, shots=shots), geometries


def save_record(path: "str | Path", record: MeasurementRecord,
                geometries: "list[AtomGeometry]", drive: DriveParams,
                spam: SpamModel, seed: "int | None") -> None:
    payload = record_to_dict(record, geometries, drive, spam, seed)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_record(path: "str | Path") -> "tuple[MeasurementRecord, list[AtomGeometry]]":
    return record_from_dict(json.loads(Path(path).read_text()))


def export_matrix_csv(ensemble: MeasurementEnsemble, path: "str | Path") -> None:
    """Write the measurement matrix as CSV, one (arrangement, bitstring) row each."""
    n_out = ensemble.n_outcomes
    width = ensemble.n_system + ensemble.n_ancilla
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["arrangement", "bitstring"] +
                        [f"op_{i}" for i in range(ensemble.matrix.shape[1])])
        for k, row in enumerate(ensemble.matrix):
            m, n = divmod(k, n_out)
            writer.writerow([m, format(n, f"0{width}b")] + [repr(v) for v in row])
