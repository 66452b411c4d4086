"""Bayesian mean estimation of the system state by Metropolis-Hastings MCMC.

The chain lives in purification space: a complex unit vector over the system
Hilbert space times a small auxiliary space, whose partial trace over the
auxiliary factor is always a physical density matrix. A Haar-random such
vector induces the prior, Gaussian perturbation plus renormalization is the
(symmetric) proposal, and the posterior mean of the traced-out samples is the
estimate. Every sample, and therefore the mean, is physical by construction,
which is the whole point of preferring this estimator over plain likelihood
maximization.
"""

from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import qcore
from .tomography import MeasurementEnsemble, MeasurementRecord

LIKELIHOOD_FLOOR = 1e-12


@dataclass(frozen=True)
class McmcConfig:
    """Chain controls. ``delta0`` is the step-size constant of the adaptation
    rule delta = 4*pi*delta0*<T(rho, mean rho)>, re-evaluated every
    ``adapt_interval`` steps during burn-in (over a moving window of the last
    ``adapt_window`` stride-subsampled states, so the spread tracks the local
    posterior scale rather than the approach transient) and frozen afterwards
    to keep the post-burn-in chain a valid Markov chain."""

    chain_length: int = 50_000
    burn_in: int = 10_000
    thinning: int = 10
    delta0: float = 0.1
    seed: int = 0
    aux_dim: int = 2
    adapt_interval: int = 100
    adapt_stride: int = 10
    adapt_window: int = 50
    delta_min: float = 1e-3
    checkpoint_path: "str | None" = None
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.burn_in >= self.chain_length:
            raise ValueError("burn_in must be smaller than chain_length")
        if self.thinning < 1 or self.adapt_interval < 1 or self.adapt_stride < 1:
            raise ValueError("thinning, adapt_interval, and adapt_stride must be >= 1")
        if self.aux_dim < 1:
            raise ValueError("aux_dim must be >= 1")


@dataclass
class BmeResult:
    """Posterior-mean estimate with its spread diagnostics."""

    rho_mean: np.ndarray
    rho_std: np.ndarray
    fidelity_to_mean: "dict[str, float]"
    acceptance_rate: float
    sample_count: int
    map_log_likelihood: float
    delta_final: float
    acceptance_warning: bool = False

    def to_dict(self) -> dict:
        return {
            "rho_mean": encode_matrix(self.rho_mean),
            "rho_std": [[float(v) for v in row] for row in self.rho_std],
            "fidelity_to_mean": {k: float(v) for k, v in self.fidelity_to_mean.items()},
            "acceptance_rate": float(self.acceptance_rate),
            "sample_count": int(self.sample_count),
            "map_log_likelihood": float(self.map_log_likelihood),
            "delta_final": float(self.delta_final),
            "acceptance_warning": bool(self.acceptance_warning),
        }


def encode_matrix(matrix: np.ndarray) -> list:
    """Complex matrix as nested [re, im] pairs (JSON-ready)."""
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(matrix, dtype=complex)]


def decode_matrix(payload: list) -> np.ndarray:
    rows = [[complex(entry[0], entry[1]) for entry in row] for row in payload]
    return np.array(rows, dtype=complex)


def sample_prior(n_qubits: int, rng: "np.random.Generator | int", aux_dim: int = 2) -> np.ndarray:
    """Haar-random purification vector of dimension 2**n_qubits * aux_dim.

    Normalized i.i.d. complex Gaussians are uniform on the sphere; tracing the
    auxiliary factor out of the outer product gives the prior state.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(rng))
    dim = 2**n_qubits * aux_dim
    vec = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def purified_to_state(psi: np.ndarray, n_qubits: int) -> np.ndarray:
    """Trace the trailing auxiliary factor out of |psi><psi|."""
    dim_sys = 2**n_qubits
    aux_dim = psi.shape[0] // dim_sys
    block = psi.reshape(dim_sys, aux_dim)
    return block @ block.conj().T


def _as_weights(record: "MeasurementRecord | np.ndarray") -> np.ndarray:
    """Flat per-row outcome weights: integer counts or effective (real) counts."""
    if isinstance(record, MeasurementRecord):
        return record.counts.reshape(-1).astype(float)
    return np.asarray(record, dtype=float).reshape(-1)


def log_likelihood(rho: np.ndarray, record: "MeasurementRecord | np.ndarray",
                   ensemble: MeasurementEnsemble) -> float:
    """Multinomial log-likelihood sum_k E_k log P_k(rho).

    Model probabilities come from the precomputed measurement matrix (linear
    in rho) and are floored at 1e-12 so zero-probability outcomes stay finite.
    ``record`` may be a MeasurementRecord or an array of effective counts,
    e.g. SPAM-corrected frequencies scaled by the shot totals.
    """
    weights = _as_weights(record)
    if weights.shape[0] != ensemble.k_rows:
        raise ValueError(f"expected {ensemble.k_rows} outcome weights, got {weights.shape[0]}")
    probs = ensemble.matrix @ qcore.pauli_coefficients(rho, ensemble.basis)
    mask = weights > 0
    if not np.any(mask):
        return 0.0
    return float(weights[mask] @ np.log(np.clip(probs[mask], LIKELIHOOD_FLOOR, None)))


def _propose(psi: np.ndarray, delta: float, rng: np.random.Generator) -> np.ndarray:
    dim = psi.shape[0]
    noise = rng.standard_normal(2 * dim)
    step = noise[:dim] + 1j * noise[dim:]
    # Component variance 1/(2*dim) puts the expected perturbation norm at
    # delta, so the adapted step is commensurate with the sample spread.
    vec = psi + delta * step / np.sqrt(2.0 * dim)
    return vec / np.linalg.norm(vec)


def mh_step(current: np.ndarray, delta: float,
            record: "MeasurementRecord | np.ndarray", ensemble: MeasurementEnsemble,
            rng: np.random.Generator,
            current_log_likelihood: "float | None" = None) -> "tuple[np.ndarray, bool, float]":
    """One Metropolis-Hastings update of the purification vector.

    Proposes normalize(psi + delta * g) with g i.i.d. complex Gaussian (a
    symmetric move on the sphere; the prior is carried by the purification
    parameterization) and accepts with min(1, likelihood ratio), evaluated in
    log space. Returns (next state, accepted, its log-likelihood).
    """
    if delta < 0:
        raise ValueError("step size must be non-negative")
    if current_log_likelihood is None:
        current_log_likelihood = log_likelihood(
            purified_to_state(current, ensemble.n_system), record, ensemble)
    proposal = _propose(current, delta, rng)
    proposal_logl = log_likelihood(
        purified_to_state(proposal, ensemble.n_system), record, ensemble)
    if np.log(rng.uniform()) < proposal_logl - current_log_likelihood:
        return proposal, True, proposal_logl
    return current, False, current_log_likelihood


def adapt_step(samples: "list[np.ndarray] | np.ndarray", delta0: float = 0.1,
               delta_min: float = 1e-3) -> float:
    """Step size 4*pi*delta0 times the mean trace distance to the sample mean.

    Degenerate windows (all samples identical) fall back to the floor.
    """
    stack = np.asarray(samples)
    if stack.shape[0] < 2:
        raise ValueError("step adaptation needs at least 2 samples")
    mean = stack.mean(axis=0)
    spread = float(np.mean([qcore.trace_distance(s, mean) for s in stack]))
    return max(4.0 * np.pi * delta0 * spread, delta_min)


def run_bme(record: "MeasurementRecord | np.ndarray", ensemble: MeasurementEnsemble,
            config: McmcConfig, resume_path: "str | Path | None" = None) -> BmeResult:
    """Posterior-mean state estimate from a full MCMC run.

    The estimate is the average of the post-burn-in, thinned samples; the
    posterior spread is reported as the per-entry sample standard deviation
    and the distribution of fidelities between samples and their mean, the
    estimator's natural error bars. Deterministic for a fixed config seed.
    """
    weights = _as_weights(record)
    n_qubits = ensemble.n_system
    chain = _ChainState.fresh(n_qubits, weights, ensemble, config) if resume_path is None \
        else _ChainState.load(resume_path, config)

    for step in range(chain.step + 1, config.chain_length + 1):
        chain.advance(step, weights, ensemble, config)
        if (config.checkpoint_path and config.checkpoint_interval
                and step % config.checkpoint_interval == 0 and step < config.chain_length):
            chain.save(config.checkpoint_path)

    retained = np.asarray(chain.retained)
    rho_mean = retained.mean(axis=0)
    rho_mean = 0.5 * (rho_mean + rho_mean.conj().T)
    rho_mean /= np.trace(rho_mean).real
    rho_std = np.sqrt(np.clip(np.mean(np.abs(retained) ** 2, axis=0) - np.abs(rho_mean) ** 2,
                              0.0, None))
    fids = np.array([qcore.fidelity(s, rho_mean) for s in retained])
    acceptance = chain.accepted_post / max(1, chain.total_post)
    warning = not 0.05 <= acceptance <= 0.95
    if warning:
        warnings.warn(f"post-burn-in acceptance rate {acceptance:.3f} outside [0.05, 0.95]; "
                      "check the step-size adaptation", stacklevel=2)
    return BmeResult(
        rho_mean=rho_mean,
        rho_std=rho_std,
        fidelity_to_mean={"mean": float(fids.mean()), "std": float(fids.std()),
                          "min": float(fids.min()), "max": float(fids.max())},
        acceptance_rate=float(acceptance),
        sample_count=int(retained.shape[0]),
        map_log_likelihood=float(chain.map_logl),
        delta_final=float(chain.delta),
        acceptance_warning=warning,
    )


@dataclass
class _ChainState:
    """Everything needed to continue (or replay) a chain bit-identically."""

    step: int
    psi: np.ndarray
    logl: float
    delta: float
    map_logl: float
    accepted_post: int
    total_post: int
    window: deque = field(default_factory=deque)
    retained: "list[np.ndarray]" = field(default_factory=list)
    rng: "np.random.Generator | None" = None

    @classmethod
    def fresh(cls, n_qubits: int, weights: np.ndarray, ensemble: MeasurementEnsemble,
              config: McmcConfig) -> "_ChainState":
        rng = np.random.Generator(np.random.PCG64(config.seed))
        psi = sample_prior(n_qubits, rng, aux_dim=config.aux_dim)
        logl = log_likelihood(purified_to_state(psi, n_qubits), weights, ensemble)
        # Before the first adaptation window: prior-scale guess for <T>.
        delta = 4.0 * np.pi * config.delta0 * 0.25
        return cls(step=0, psi=psi, logl=logl, delta=delta, map_logl=logl,
                   accepted_post=0, total_post=0,
                   window=deque(maxlen=config.adapt_window), rng=rng)

    def advance(self, step: int, weights: np.ndarray, ensemble: MeasurementEnsemble,
                config: McmcConfig):
        self.psi, accepted, self.logl = mh_step(
            self.psi, self.delta, weights, ensemble, self.rng,
            current_log_likelihood=self.logl)
        self.map_logl = max(self.map_logl, self.logl)
        self.step = step
        in_burn_in = step <= config.burn_in
        if in_burn_in:
            if step % config.adapt_stride == 0:
                self.window.append(purified_to_state(self.psi, ensemble.n_system))
            if step % config.adapt_interval == 0 and len(self.window) >= 2:
                self.delta = adapt_step(self.window, config.delta0, config.delta_min)
        else:
            self.total_post += 1
            self.accepted_post += int(accepted)
            if (step - config.burn_in) % config.thinning == 0:
                self.retained.append(purified_to_state(self.psi, ensemble.n_system))

    def save(self, path: "str | Path"):
        arrays = {
            "psi": self.psi,
            "window": np.asarray(self.window) if self.window else np.zeros((0,)),
            "retained": np.asarray(self.retained) if self.retained else np.zeros((0,)),
        }
        scalars = {
            "step": self.step, "logl": self.logl, "delta": self.delta,
            "map_logl": self.map_logl, "accepted_post": self.accepted_post,
            "total_post": self.total_post,
            "rng_state": self.rng.bit_generator.state,
        }
        np.savez(path, meta=json.dumps(scalars, default=str), **arrays)

    @classmethod
    def load(cls, path: "str | Path", config: McmcConfig) -> "_ChainState":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            rng = np.random.Generator(np.random.PCG64())
            state = meta["rng_state"]
            state["state"] = {k: int(v) for k, v in state["state"].items()}
            rng.bit_generator.state = state
            return cls(
                step=int(meta["step"]), psi=data["psi"], logl=float(meta["logl"]),
                delta=float(meta["delta"]), map_logl=float(meta["map_logl"]),
                accepted_post=int(meta["accepted_post"]), total_post=int(meta["total_post"]),
                window=deque(data["window"] if data["window"].size else [],
                             maxlen=config.adapt_window),
                retained=list(data["retained"]) if data["retained"].size else [],
                rng=rng,
            )
