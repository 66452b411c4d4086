"""Configurable-ancilla quantum state tomography for Rydberg atom arrays.

A simulation and reconstruction toolkit: it generates the measurement set
induced by movable ancilla atoms, synthesizes noisy projective-measurement
data, and reconstructs the system density matrix by linear inversion and by
Bayesian mean estimation.
"""

from .bme import BmeResult, McmcConfig, adapt_step, log_likelihood, mh_step, run_bme, sample_prior
from .config import ConfigError, ExperimentConfig, RandomGraphConfig, load_experiment, load_rank_study
from .model import (
    AtomGeometry,
    DriveParams,
    IntegrationError,
    NoiseParams,
    blockade_allowed_states,
    blockade_radius,
    build_hamiltonian,
    circular_arrangements,
    evolve_lindblad,
    evolve_unitary,
    pulse_sequence,
    regular_polygon,
    sweep_angles,
)
from .pipeline import (
    PackingInfeasibleError,
    RankStudyResult,
    ReconstructionReport,
    generate_random_graph,
    run_rank_study,
    run_tomography_pipeline,
)
from .qcore import (
    fidelity,
    hermitian_eig,
    partial_trace,
    pauli_basis,
    psd_project,
    tensor,
    trace_distance,
)
from .tomography import (
    MeasurementEnsemble,
    MeasurementRecord,
    SpamModel,
    UnderdeterminedEnsembleError,
    build_measurement_ensemble,
    least_squares_reconstruct,
    numerical_rank,
    row_independence_diagnostic,
    sample_record,
    spam_correct,
    superoperator_probability,
    target_state,
)

__version__ = "0.1.0"
