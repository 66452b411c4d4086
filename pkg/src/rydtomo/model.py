"""Rydberg atom-array physics: geometry, Ising Hamiltonian, and time evolution.

Unit convention: Rabi frequency, detuning, and interaction strengths are
linear frequencies in MHz; the Hamiltonian builder multiplies by 2*pi to get
angular rad/us. Times are in us, distances in um, so a resonant pi pulse on
one atom takes t = 1/(2*Omega). Dephasing rates are plain rates in 1/us
(numerically MHz) and enter the dissipator without a 2*pi factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .qcore import MAX_DIM, PAULI_X, hermitian_eig

DEFAULT_C6 = 0.896e6
"""Van der Waals coefficient in MHz*um^6, calibrated so that the blockade
radius at Omega = 0.896 MHz is 10 um."""

LINDBLAD_STEPS_PER_US = 2000


class IntegrationError(RuntimeError):
    """Fixed-step integration lost accuracy; retry with more steps."""


@dataclass(frozen=True)
class AtomGeometry:
    """Positions (um) of the system atoms and the ancilla atoms.

    System atoms come first in the global atom index and in the tensor order.
    """

    system: np.ndarray
    ancilla: np.ndarray

    def __post_init__(self):
        system = np.atleast_2d(np.asarray(self.system, dtype=float))
        ancilla = np.asarray(self.ancilla, dtype=float)
        ancilla = ancilla.reshape(0, system.shape[1]) if ancilla.size == 0 else np.atleast_2d(ancilla)
        object.__setattr__(self, "system", system)
        object.__setattr__(self, "ancilla", ancilla)
        positions = self.positions
        if not np.all(np.isfinite(positions)):
            raise ValueError("atom positions must be finite")
        dists = _pairwise_distances(positions)
        n = len(positions)
        if n > 1 and np.min(dists[np.triu_indices(n, k=1)]) <= 0.0:
            raise ValueError("atoms must sit at distinct positions")

    @property
    def n_system(self) -> int:
        return self.system.shape[0]

    @property
    def n_ancilla(self) -> int:
        return self.ancilla.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.n_system + self.n_ancilla

    @property
    def positions(self) -> np.ndarray:
        return np.vstack([self.system, self.ancilla])


def _pairwise_distances(positions: np.ndarray) -> np.ndarray:
    deltas = positions[:, None, :] - positions[None, :, :]
    return np.sqrt((deltas**2).sum(axis=-1))


def regular_polygon(n_atoms: int, radius: float, phase: float = 0.0) -> np.ndarray:
    """Vertices of a regular polygon of given circumradius, centered at the origin."""
    angles = phase + 2.0 * np.pi * np.arange(n_atoms) / n_atoms
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def circular_arrangements(system: np.ndarray, n_ancilla: int, radius: float,
                          angles: np.ndarray) -> "list[AtomGeometry]":
    """One geometry per angle, with ancillas on a circle around the system center.

    For several ancillas the remaining ones are spread equally around the same
    circle (offsets of 2*pi/n_ancilla from the swept angle).
    """
    system = np.atleast_2d(np.asarray(system, dtype=float))
    center = system.mean(axis=0)
    offsets = 2.0 * np.pi * np.arange(n_ancilla) / n_ancilla
    geometries = []
    for theta in np.asarray(angles, dtype=float):
        phis = theta + offsets
        ancilla = center + radius * np.column_stack([np.cos(phis), np.sin(phis)])
        geometries.append(AtomGeometry(system=system, ancilla=ancilla))
    return geometries


def sweep_angles(count: int) -> np.ndarray:
    """Evenly spaced ancilla angles 2*pi*j/count for j = 0..count-1."""
    return 2.0 * np.pi * np.arange(count) / count


@dataclass(frozen=True)
class DriveParams:
    """Global Rydberg drive: linear frequencies in MHz, times in us.

    ``anti_addressed`` atoms (global indices, system first) have their drive
    suppressed; in "suppress" mode their sigma_x term is zeroed exactly, in
    "detune" mode they instead receive an extra static detuning shift of
    ``aa_detuning_mhz``.
    """

    rabi_mhz: float
    detuning_mhz: float = 0.0
    c6: float = DEFAULT_C6
    duration_us: float = 0.0
    anti_addressed: frozenset = field(default_factory=frozenset)
    aa_mode: str = "suppress"
    aa_detuning_mhz: float = 50.0

    def __post_init__(self):
        if self.rabi_mhz < 0:
            raise ValueError("Rabi frequency must be non-negative")
        if self.duration_us < 0:
            raise ValueError("pulse duration must be non-negative")
        if self.c6 <= 0:
            raise ValueError("c6 must be positive")
        if self.aa_mode not in ("suppress", "detune"):
            raise ValueError(f"unknown anti-addressing mode {self.aa_mode!r}")
        object.__setattr__(self, "anti_addressed", frozenset(int(i) for i in self.anti_addressed))

    def with_duration(self, duration_us: float) -> "DriveParams":
        return replace(self, duration_us=duration_us)


@dataclass(frozen=True)
class NoiseParams:
    """Dephasing rates in 1/us: per-atom individual and one collective channel."""

    gamma_ind: float = 0.0
    gamma_col: float = 0.0

    def __post_init__(self):
        if self.gamma_ind < 0 or self.gamma_col < 0:
            raise ValueError("dephasing rates must be non-negative")

    @property
    def is_zero(self) -> bool:
        return self.gamma_ind == 0.0 and self.gamma_col == 0.0


def _single_atom_op(op: np.ndarray, atom: int, n_atoms: int) -> np.ndarray:
    """Embed a one-atom operator at the given global index (qubit 0 = MSB)."""
    result = np.array([[1.0 + 0j]])
    for i in range(n_atoms):
        result = np.kron(result, op if i == atom else np.eye(2))
    return result


def number_operators(n_atoms: int) -> np.ndarray:
    """Stacked diagonal Rydberg number operators n_i, shape (n_atoms, dim, dim)."""
    dim = 2**n_atoms
    ops = np.zeros((n_atoms, dim, dim), dtype=complex)
    indices = np.arange(dim)
    for atom in range(n_atoms):
        bit = (indices >> (n_atoms - 1 - atom)) & 1
        ops[atom, indices, indices] = bit
    return ops


def blockade_allowed_states(geom: AtomGeometry, cutoff_um: float) -> np.ndarray:
    """Basis indices with no simultaneously excited pair closer than the cutoff.

    Deep in the blockade regime the dropped states are never populated; the
    truncation makes large-array simulations tractable.
    """
    n = geom.n_atoms
    dists = _pairwise_distances(geom.positions)
    blocked_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)
                     if dists[i, j] < cutoff_um]
    indices = np.arange(2**n)
    allowed = np.ones(2**n, dtype=bool)
    for i, j in blocked_pairs:
        both = ((indices >> (n - 1 - i)) & 1) & ((indices >> (n - 1 - j)) & 1)
        allowed &= both == 0
    return indices[allowed]


def build_hamiltonian(geom: AtomGeometry, drive: DriveParams) -> np.ndarray:
    """Ising Hamiltonian of the driven array, in angular units (rad/us).

    H = 2*pi * [ Omega/2 * sum_i sigma_x^(i) - Delta_i/2 * sum_i sigma_z^(i)
                 + sum_{i<j} C6 / r_ij^6 * n_i n_j ]
    with the sigma_x term dropped (or Delta shifted) on anti-addressed atoms.
    """
    n = geom.n_atoms
    dim = 2**n
    if dim > MAX_DIM:
        raise ValueError(f"{n} atoms exceed the supported dimension budget {MAX_DIM}")
    bad = [i for i in drive.anti_addressed if not 0 <= i < n]
    if bad:
        raise ValueError(f"anti-addressed indices {bad} out of range for {n} atoms")

    ham = np.zeros((dim, dim), dtype=complex)
    indices = np.arange(dim)
    for atom in range(n):
        detuning = drive.detuning_mhz
        driven = True
        if atom in drive.anti_addressed:
            if drive.aa_mode == "suppress":
                driven = False
            else:
                detuning = drive.detuning_mhz - drive.aa_detuning_mhz
        if driven and drive.rabi_mhz != 0.0:
            ham += (drive.rabi_mhz / 2.0) * _single_atom_op(PAULI_X, atom, n)
        if detuning != 0.0:
            bit = (indices >> (n - 1 - atom)) & 1
            ham[indices, indices] += -(detuning / 2.0) * (1.0 - 2.0 * bit)

    positions = geom.positions
    dists = _pairwise_distances(positions)
    for i in range(n):
        bit_i = (indices >> (n - 1 - i)) & 1
        for j in range(i + 1, n):
            bit_j = (indices >> (n - 1 - j)) & 1
            strength = drive.c6 / dists[i, j] ** 6
            ham[indices, indices] += strength * (bit_i * bit_j)
    return 2.0 * np.pi * ham


def blockade_radius(drive: DriveParams) -> float:
    """Distance (um) at which the van der Waals shift equals the Rabi frequency."""
    if drive.rabi_mhz <= 0:
        raise ValueError("blockade radius requires a positive Rabi frequency")
    return float((drive.c6 / drive.rabi_mhz) ** (1.0 / 6.0))


def propagator(ham: np.ndarray, t_us: float) -> np.ndarray:
    """Unitary exp(-i H t) for a Hermitian H (angular units), via eigendecomposition."""
    eigenvalues, eigenvectors = hermitian_eig(ham, atol=1e-9)
    phases = np.exp(-1j * eigenvalues * t_us)
    return (eigenvectors * phases) @ eigenvectors.conj().T


def evolve_unitary(rho: np.ndarray, ham: np.ndarray, t_us: float) -> np.ndarray:
    """Closed-system evolution U rho U-dagger."""
    rho = np.asarray(rho)
    if rho.shape != ham.shape:
        raise ValueError(f"state shape {rho.shape} does not match Hamiltonian {ham.shape}")
    unitary = propagator(ham, t_us)
    return unitary @ rho @ unitary.conj().T


def _dephasing_ops(noise: NoiseParams, occupations: np.ndarray) -> "list[tuple[float, np.ndarray]]":
    """(rate, jump operator) pairs: n_i per atom plus the collective sum_i n_i.

    ``occupations`` holds the per-basis-state excitation bit of every atom,
    shape (n_atoms, dim), so the operators stay valid on truncated subspaces.
    """
    ops = []
    if noise.gamma_ind > 0:
        ops.extend((noise.gamma_ind, np.diag(bits.astype(complex))) for bits in occupations)
    if noise.gamma_col > 0:
        ops.append((noise.gamma_col, np.diag(occupations.sum(axis=0).astype(complex))))
    return ops


def _occupation_bits(basis_labels: np.ndarray, n_atoms: int) -> np.ndarray:
    shifts = n_atoms - 1 - np.arange(n_atoms)
    return (basis_labels[None, :] >> shifts[:, None]) & 1


def evolve_lindblad(rho: np.ndarray, ham: np.ndarray, noise: NoiseParams,
                    t_us: float, steps: "int | None" = None,
                    basis_labels: "np.ndarray | None" = None,
                    n_atoms: "int | None" = None) -> np.ndarray:
    """Dephasing master equation integrated by fixed-step RK4.

    drho/dt = -i[H, rho] + sum_i gamma_ind D[n_i](rho) + gamma_col D[sum_i n_i](rho)
    with D[L](rho) = L rho L' - (L'L rho + rho L'L)/2. The state is
    re-symmetrized every step; a final trace drift beyond 1e-6 raises
    :class:`IntegrationError` advising more steps.

    ``basis_labels`` (with ``n_atoms``) names the computational index of each
    basis row when the state lives in a truncated subspace; by default the
    full 2**n register is assumed.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != ham.shape:
        raise ValueError(f"state shape {rho.shape} does not match Hamiltonian {ham.shape}")
    if t_us == 0.0:
        return rho.copy()
    if steps is None:
        steps = max(1, int(np.ceil(LINDBLAD_STEPS_PER_US * t_us)))
    if steps < 1:
        raise ValueError("step count must be at least 1")

    if basis_labels is None:
        n_atoms = int(np.log2(rho.shape[0]))
        basis_labels = np.arange(rho.shape[0])
    elif n_atoms is None:
        raise ValueError("n_atoms is required alongside basis_labels")
    jumps = _dephasing_ops(noise, _occupation_bits(np.asarray(basis_labels), n_atoms))
    # n_i operators are diagonal and real, so L = L' and L'L = L*L.
    jump_pairs = [(g, op, op @ op) for g, op in jumps]

    def rhs(state: np.ndarray) -> np.ndarray:
        out = -1j * (ham @ state - state @ ham)
        for gamma, op, op_sq in jump_pairs:
            out += gamma * (op @ state @ op - 0.5 * (op_sq @ state + state @ op_sq))
        return out

    dt = t_us / steps
    state = rho.copy()
    for _ in range(steps):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * dt * k1)
        k3 = rhs(state + 0.5 * dt * k2)
        k4 = rhs(state + dt * k3)
        state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        state = 0.5 * (state + state.conj().T)
        if not np.all(np.isfinite(state)):
            raise IntegrationError(
                f"integration diverged with {steps} steps; increase the step count"
            )

    drift = abs(complex(np.trace(state)) - complex(np.trace(rho)))
    if drift > 1e-6:
        raise IntegrationError(
            f"trace drifted by {drift:.2e} over {steps} steps; increase the step count"
        )
    return state


def evolve(rho: np.ndarray, ham: np.ndarray, noise: NoiseParams, t_us: float,
           steps: "int | None" = None, basis_labels: "np.ndarray | None" = None,
           n_atoms: "int | None" = None) -> np.ndarray:
    """Unitary evolution when noise is zero, Lindblad integration otherwise."""
    if noise.is_zero:
        return evolve_unitary(rho, ham, t_us)
    return evolve_lindblad(rho, ham, noise, t_us, steps=steps,
                           basis_labels=basis_labels, n_atoms=n_atoms)


def pulse_sequence(geom: AtomGeometry, drive_init: DriveParams,
                   drive_entangle: DriveParams, noise: NoiseParams,
                   steps: "int | None" = None,
                   blockade_cutoff_um: "float | None" = None) -> np.ndarray:
    """Two-stage preparation: drive the system with ancillas suppressed, then all.

    Starting from |0...0> of the joint array, the initialization pulse
    (ancillas anti-addressed) runs for its duration, then the entangling pulse
    (nobody anti-addressed) runs for its duration. Returns the joint state.

    ``blockade_cutoff_um`` switches on subspace truncation: basis states with
    two excited atoms closer than the cutoff are dropped during the evolution
    (valid deep in the blockade regime) and restored as zero amplitudes in the
    returned full-dimension state.
    """
    ancilla_indices = frozenset(range(geom.n_system, geom.n_atoms))
    if drive_init.anti_addressed != ancilla_indices:
        raise ValueError(
            f"initialization drive must anti-address exactly the ancilla atoms "
            f"{sorted(ancilla_indices)}, got {sorted(drive_init.anti_addressed)}"
        )
    if drive_entangle.anti_addressed:
        raise ValueError("entangling drive must not anti-address any atom")

    dim = 2**geom.n_atoms
    labels = None
    if blockade_cutoff_um is not None:
        labels = blockade_allowed_states(geom, blockade_cutoff_um)
    work_dim = dim if labels is None else len(labels)
    rho = np.zeros((work_dim, work_dim), dtype=complex)
    rho[0, 0] = 1.0  # index 0 is |0...0> in either basis

    def restricted(ham: np.ndarray) -> np.ndarray:
        return ham if labels is None else ham[np.ix_(labels, labels)]

    rho = evolve(rho, restricted(build_hamiltonian(geom, drive_init)), noise,
                 drive_init.duration_us, steps=steps,
                 basis_labels=labels, n_atoms=geom.n_atoms)
    if drive_entangle.duration_us > 0.0:
        rho = evolve(rho, restricted(build_hamiltonian(geom, drive_entangle)), noise,
                     drive_entangle.duration_us, steps=steps,
                     basis_labels=labels, n_atoms=geom.n_atoms)
    if labels is None:
        return rho
    full = np.zeros((dim, dim), dtype=complex)
    full[np.ix_(labels, labels)] = rho
    return full
