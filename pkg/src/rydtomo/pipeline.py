"""End-to-end tomography and rank-study pipelines, fully seeded and deterministic."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import qcore
from .bme import BmeResult, run_bme
from .config import ExperimentConfig, RandomGraphConfig
from .model import AtomGeometry, pulse_sequence
from .tomography import (
    MeasurementEnsemble,
    MeasurementRecord,
    UnderdeterminedEnsembleError,
    build_measurement_ensemble,
    numerical_rank,
    least_squares_reconstruct,
    outcome_distribution,
    sample_record,
    spam_correct,
    target_state,
)

BME_SEED_OFFSET = 10_000_019
"""Decorrelates the MCMC stream from the multinomial sampling stream."""


class PackingInfeasibleError(RuntimeError):
    """Random-graph rejection sampling could not place all atoms."""


class ConfigGuardError(RuntimeError):
    """A guarded long-runtime option was requested without its flag."""


@dataclass
class EstimateResult:
    """One estimator's output for one seed."""

    rho: np.ndarray
    fidelity_to_reference: float
    fidelity_to_target: float
    min_eigenvalue_raw: "float | None" = None
    trace_raw: "float | None" = None
    bme: "BmeResult | None" = None


@dataclass
class SeedResult:
    seed: int
    estimates: "dict[str, EstimateResult]"
    record: "MeasurementRecord | None"
    corrected_probabilities: np.ndarray
    spam_clip_l1: np.ndarray


@dataclass
class ReconstructionReport:
    """Everything the report writer needs: inputs, diagnostics, and estimates."""

    config: ExperimentConfig
    ensemble: MeasurementEnsemble
    rank: int
    singular_values: np.ndarray
    rho_reference: np.ndarray
    rho_target: np.ndarray
    fidelity_reference_target: float
    model_probabilities: np.ndarray
    data_probabilities: np.ndarray
    seed_results: "list[SeedResult]" = field(default_factory=list)

    def mean_estimate(self, estimator: str) -> "np.ndarray | None":
        arrays = [r.estimates[estimator].rho for r in self.seed_results
                  if estimator in r.estimates]
        if not arrays:
            return None
        return np.mean(arrays, axis=0)

    def fidelity_summary(self, estimator: str) -> "dict[str, float] | None":
        pairs = [(r.estimates[estimator].fidelity_to_reference,
                  r.estimates[estimator].fidelity_to_target)
                 for r in self.seed_results if estimator in r.estimates]
        if not pairs:
            return None
        ref, tgt = zip(*pairs)
        return {
            "fidelity_to_reference_mean": float(np.mean(ref)),
            "fidelity_to_reference_std": float(np.std(ref)),
            "fidelity_to_target_mean": float(np.mean(tgt)),
            "fidelity_to_target_std": float(np.std(tgt)),
        }


def simulate_reference_state(config: ExperimentConfig) -> np.ndarray:
    """System state right after the initialization pulse, with configured dephasing.

    This is the reconstruction reference: the best theoretical account of the
    prepared state including the known noise channels.
    """
    geom = config.geometries()[0]
    joint = pulse_sequence(geom, config.drive_init(),
                           config.drive_entangle().with_duration(0.0), config.noise,
                           blockade_cutoff_um=config.blockade_truncation_um)
    keep = list(range(config.n_system))
    dims = [2] * (config.n_system + config.n_ancilla)
    rho = qcore.partial_trace(joint, keep, dims)
    return 0.5 * (rho + rho.conj().T)


def simulate_data_probabilities(config: ExperimentConfig, rho_reference: np.ndarray,
                                ensemble: MeasurementEnsemble,
                                parallelism: int = 1) -> np.ndarray:
    """Outcome distributions used to synthesize measurement data.

    With dephasing configured, each arrangement's entangling evolution runs the
    master equation; otherwise this reduces to the ideal linear model.
    """
    if config.noise.is_zero:
        return ensemble.model_probabilities(rho_reference)
    drive = config.drive_entangle()

    def one(geom: AtomGeometry) -> np.ndarray:
        return outcome_distribution(rho_reference, geom, drive, noise=config.noise,
                                    blockade_cutoff_um=config.blockade_truncation_um)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(one, ensemble.geometries))
    else:
        rows = [one(geom) for geom in ensemble.geometries]
    probs = np.asarray(rows)
    return probs / probs.sum(axis=1, keepdims=True)


def _reconstruct_seed(config: ExperimentConfig, ensemble: MeasurementEnsemble,
                      data_probabilities: np.ndarray, rho_reference: np.ndarray,
                      rho_target: np.ndarray, seed: int) -> SeedResult:
    if config.exact_probabilities:
        record = None
        corrected = data_probabilities
        clip_l1 = np.zeros(data_probabilities.shape[0])
    else:
        record = sample_record(data_probabilities, config.shots, config.spam, seed)
        correction = spam_correct(record, config.spam)
        corrected = correction.probabilities
        clip_l1 = correction.clip_l1

    estimates: "dict[str, EstimateResult]" = {}
    if config.estimator in ("pseudoinverse", "both"):
        _, rho_raw = least_squares_reconstruct(ensemble, corrected.reshape(-1))
        rho_raw = 0.5 * (rho_raw + rho_raw.conj().T)
        min_eig = float(np.linalg.eigvalsh(rho_raw).min())
        rho_pi = qcore.psd_project(rho_raw)
        estimates["pseudoinverse"] = EstimateResult(
            rho=rho_pi,
            fidelity_to_reference=qcore.fidelity(rho_pi, rho_reference),
            fidelity_to_target=qcore.fidelity(rho_pi, rho_target),
            min_eigenvalue_raw=min_eig,
            trace_raw=float(np.trace(rho_raw).real),
        )
    if config.estimator in ("bme", "both"):
        weights = corrected * config.shots
        mcmc = replace(config.bme, seed=seed + BME_SEED_OFFSET)
        result = run_bme(weights.reshape(-1), ensemble, mcmc)
        estimates["bme"] = EstimateResult(
            rho=result.rho_mean,
            fidelity_to_reference=qcore.fidelity(result.rho_mean, rho_reference),
            fidelity_to_target=qcore.fidelity(result.rho_mean, rho_target),
            bme=result,
        )
    return SeedResult(seed=seed, estimates=estimates, record=record,
                      corrected_probabilities=corrected, spam_clip_l1=clip_l1)


def run_tomography_pipeline(config: ExperimentConfig, parallelism: int = 1) -> ReconstructionReport:
    """Prepare, measure, corrupt, correct, and reconstruct; one report per config.

    Aborts with :class:`rydtomo.tomography.UnderdeterminedEnsembleError` if the
    arrangement set cannot determine the state.
    """
    geometries = config.geometries()
    ensemble = build_measurement_ensemble(geometries, config.drive_entangle(),
                                          angles=config.angles(), parallelism=parallelism)
    rank, singular = numerical_rank(ensemble)
    n_params = 4**config.n_system
    if rank < n_params:
        raise UnderdeterminedEnsembleError(rank, n_params)

    rho_reference = simulate_reference_state(config)
    rho_target = target_state(config.target_kind, config.n_system)
    model_probs = ensemble.model_probabilities(rho_reference)
    data_probs = simulate_data_probabilities(config, rho_reference, ensemble,
                                             parallelism=parallelism)

    def one_seed(seed: int) -> SeedResult:
        return _reconstruct_seed(config, ensemble, data_probs, rho_reference,
                                 rho_target, seed)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            seed_results = list(pool.map(one_seed, config.seeds))
    else:
        seed_results = [one_seed(seed) for seed in config.seeds]

    return ReconstructionReport(
        config=config,
        ensemble=ensemble,
        rank=rank,
        singular_values=singular,
        rho_reference=rho_reference,
        rho_target=rho_target,
        fidelity_reference_target=qcore.fidelity(rho_reference, rho_target),
        model_probabilities=model_probs,
        data_probabilities=data_probs,
        seed_results=seed_results,
    )


MAX_CONSECUTIVE_REJECTIONS = 100_000


def _sample_packed_points(count: int, side: float, r_exc: float,
                          rng: np.random.Generator,
                          fixed: "np.ndarray | None" = None) -> "np.ndarray | None":
    """Uniform points in a side x side square with pairwise distances >= r_exc.

    Sequential rejection sampling; returns None once the rejection budget is
    exhausted. ``fixed`` points participate in the distance constraint but are
    not re-drawn.
    """
    placed = [] if fixed is None else [p for p in np.asarray(fixed, dtype=float)]
    n_fixed = len(placed)
    rejections = 0
    while len(placed) < n_fixed + count:
        candidate = rng.uniform(0.0, side, size=2)
        if all(np.linalg.norm(candidate - p) >= r_exc for p in placed):
            placed.append(candidate)
        else:
            rejections += 1
            if rejections >= MAX_CONSECUTIVE_REJECTIONS:
                return None
    return np.asarray(placed[n_fixed:])


def generate_random_graph(config: RandomGraphConfig, seed: int) -> AtomGeometry:
    """Random atom graph: uniform positions with an exclusion radius.

    The sampling square has area (atoms / density), scaled by the configured
    inflation factor; with ``auto_inflate`` the area grows by 1.5x whenever the
    rejection budget runs out, and the factor actually used is recorded by the
    *_with_meta variant.
    """
    geometry, _ = generate_random_graph_with_meta(config, seed)
    return geometry


def generate_random_graph_with_meta(config: RandomGraphConfig, seed: int,
                                    n_system: "int | None" = None) -> "tuple[AtomGeometry, float]":
    n = config.n_system[0] if n_system is None else n_system
    total = n + config.n_ancilla
    rng = np.random.Generator(np.random.PCG64(seed))
    inflation = config.area_inflation
    while True:
        side = np.sqrt(inflation * total / config.density_per_um2)
        points = _sample_packed_points(total, side, config.exclusion_radius_um, rng)
        if points is not None:
            return (AtomGeometry(system=points[:n], ancilla=points[n:]), inflation)
        if not config.auto_inflate or inflation >= 8.0:
            raise PackingInfeasibleError(
                f"cannot pack {total} atoms with exclusion radius "
                f"{config.exclusion_radius_um} um at density {config.density_per_um2} "
                f"(inflation {inflation:g})"
            )
        inflation *= 1.5


def _resample_ancillas(config: RandomGraphConfig, system: np.ndarray, side: float,
                       rng: np.random.Generator) -> "np.ndarray | None":
    return _sample_packed_points(config.n_ancilla, side, config.exclusion_radius_um,
                                 rng, fixed=system)


@dataclass
class RankTrial:
    n_system: int
    n_arrangements: int
    k_rows: int
    rank: int
    seed: int
    area_inflation: float

    @property
    def ratio(self) -> float:
        return self.rank / 4**self.n_system


@dataclass
class RankStudyResult:
    config: RandomGraphConfig
    trials: "list[RankTrial]"


def run_rank_study(config: RandomGraphConfig, parallelism: int = 1,
                   allow_large: bool = False) -> RankStudyResult:
    """Rank sweep over random graphs: (system size) x (arrangement count) x trials.

    Per trial, the system is drawn once and each arrangement redraws only the
    ancilla positions (arrangements share the system by construction). Large
    systems are gated behind ``allow_large`` because the cost grows as 16**N.
    """
    for n in config.n_system:
        if n > config.max_system and not allow_large:
            raise ConfigGuardError(
                f"system size {n} exceeds max_system={config.max_system}; "
                f"pass the long-runtime flag to allow it"
            )
    drive = config.drive()

    jobs = [(n, m, trial) for n in config.n_system
            for m in config.arrangements for trial in range(config.trials)]

    def one(job: "tuple[int, int, int]") -> RankTrial:
        n, m, trial = job
        # One deterministic stream per (n, m, trial) cell.
        base_seed = np.random.SeedSequence((config.seed, n, m, trial)).generate_state(1)[0]
        geometry, inflation = generate_random_graph_with_meta(config, int(base_seed), n_system=n)
        side = np.sqrt(inflation * (n + config.n_ancilla) / config.density_per_um2)
        rng = np.random.Generator(np.random.PCG64(int(base_seed) + 1))
        geometries = [geometry]
        while len(geometries) < m:
            ancilla = _resample_ancillas(config, geometry.system, side, rng)
            if ancilla is None:
                raise PackingInfeasibleError(
                    f"cannot place ancillas for arrangement {len(geometries)} "
                    f"(N={n}, trial {trial})"
                )
            geometries.append(AtomGeometry(system=geometry.system, ancilla=ancilla))
        ensemble = build_measurement_ensemble(geometries, drive)
        rank, _ = numerical_rank(ensemble)
        return RankTrial(n_system=n, n_arrangements=m, k_rows=ensemble.k_rows,
                         rank=rank, seed=trial, area_inflation=inflation)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            trials = list(pool.map(one, jobs))
    else:
        trials = [one(job) for job in jobs]
    return RankStudyResult(config=config, trials=trials)
