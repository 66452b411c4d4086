"""TOML experiment configuration: parsing, validation, and bundled presets."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bme import McmcConfig
from .model import DEFAULT_C6, AtomGeometry, DriveParams, NoiseParams, circular_arrangements, regular_polygon, sweep_angles
from .tomography import SpamModel

PRESET_DIR = Path(__file__).parent / "presets"

ESTIMATOR_KINDS = ("pseudoinverse", "bme", "both")


class ConfigError(ValueError):
    """The experiment configuration is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One tomography run: geometry, drive, noise, sampling, and estimators."""

    n_system: int
    system_positions: "np.ndarray | None" = None
    system_radius_um: "float | None" = None
    system_phase_rad: float = np.pi
    n_ancilla: int = 1
    ancilla_radius_um: float = 9.0
    ancilla_angles_rad: "np.ndarray | None" = None
    n_angles: int = 20
    rabi_mhz: float = 0.896
    detuning_mhz: float = 0.0
    c6: float = DEFAULT_C6
    t_init_us: float = 0.387
    t_entangle_us: float = 0.595
    noise: NoiseParams = field(default_factory=NoiseParams)
    blockade_truncation_um: "float | None" = None
    spam: SpamModel = field(default_factory=SpamModel)
    shots: int = 550
    seeds: "tuple[int, ...]" = (0,)
    exact_probabilities: bool = False
    estimator: str = "both"
    bme: McmcConfig = field(default_factory=McmcConfig)
    target: "str | None" = None
    label: str = "experiment"

    def __post_init__(self):
        if self.n_system < 1:
            raise ConfigError("the system needs at least one atom")
        if self.n_ancilla < 1:
            raise ConfigError("at least one ancilla atom is required")
        if self.system_positions is None and self.system_radius_um is None:
            raise ConfigError("specify either a system polygon radius or explicit positions")
        if self.estimator not in ESTIMATOR_KINDS:
            raise ConfigError(f"estimator must be one of {ESTIMATOR_KINDS}, got {self.estimator!r}")
        if self.shots < 1:
            raise ConfigError("shots must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.target not in (None, "bell", "w"):
            raise ConfigError(f"unknown target state {self.target!r}")
        if self.target == "bell" and self.n_system != 2:
            raise ConfigError("the Bell target requires a 2-atom system")
        total = self.n_system + self.n_ancilla
        if 2**total > 2**9:
            raise ConfigError(f"{total} atoms exceed the desk-scale dimension budget")

    @property
    def target_kind(self) -> str:
        if self.target is not None:
            return self.target
        return "bell" if self.n_system == 2 else "w"

    def system(self) -> np.ndarray:
        if self.system_positions is not None:
            return np.asarray(self.system_positions, dtype=float)
        return regular_polygon(self.n_system, self.system_radius_um, phase=self.system_phase_rad)

    def angles(self) -> np.ndarray:
        if self.ancilla_angles_rad is not None:
            return np.asarray(self.ancilla_angles_rad, dtype=float)
        return sweep_angles(self.n_angles)

    def geometries(self) -> "list[AtomGeometry]":
        return circular_arrangements(self.system(), self.n_ancilla,
                                     self.ancilla_radius_um, self.angles())

    def drive_init(self) -> DriveParams:
        ancillas = frozenset(range(self.n_system, self.n_system + self.n_ancilla))
        return DriveParams(rabi_mhz=self.rabi_mhz, detuning_mhz=self.detuning_mhz,
                           c6=self.c6, duration_us=self.t_init_us, anti_addressed=ancillas)

    def drive_entangle(self) -> DriveParams:
        return DriveParams(rabi_mhz=self.rabi_mhz, detuning_mhz=self.detuning_mhz,
                           c6=self.c6, duration_us=self.t_entangle_us)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "system": {
                "n_atoms": self.n_system,
                "positions_um": self.system().tolist(),
                "radius_um": self.system_radius_um,
                "phase_rad": self.system_phase_rad,
            },
            "ancilla": {
                "count": self.n_ancilla,
                "radius_um": self.ancilla_radius_um,
                "angles_rad": self.angles().tolist(),
            },
            "drive": {
                "rabi_mhz": self.rabi_mhz,
                "detuning_mhz": self.detuning_mhz,
                "c6_mhz_um6": self.c6,
                "t_init_us": self.t_init_us,
                "t_entangle_us": self.t_entangle_us,
            },
            "noise": {"gamma_ind_mhz": self.noise.gamma_ind, "gamma_col_mhz": self.noise.gamma_col,
                      "blockade_truncation_um": self.blockade_truncation_um},
            "spam": {"p10": self.spam.p10, "p01": self.spam.p01},
            "sampling": {
                "shots": self.shots,
                "seeds": list(self.seeds),
                "exact_probabilities": self.exact_probabilities,
            },
            "estimator": {
                "kind": self.estimator,
                "bme": {
                    "chain_length": self.bme.chain_length,
                    "burn_in": self.bme.burn_in,
                    "thinning": self.bme.thinning,
                    "delta0": self.bme.delta0,
                    "aux_dim": self.bme.aux_dim,
                },
            },
            "target": self.target_kind,
        }

    def override(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class RandomGraphConfig:
    """Random-geometry rank study: packing parameters and the sweep plan."""

    density_per_um2: float = 0.1
    exclusion_radius_um: float = 5.0
    n_system: "tuple[int, ...]" = (1, 2, 3)
    n_ancilla: int = 1
    arrangements: "tuple[int, ...]" = (1, 2, 4, 8)
    trials: int = 100
    seed: int = 0
    area_inflation: float = 1.0
    auto_inflate: bool = True
    rabi_mhz: float = 1.0
    c6: float = DEFAULT_C6
    t_entangle_us: "float | None" = None
    max_system: int = 4
    label: str = "rank-study"

    def __post_init__(self):
        if self.density_per_um2 <= 0:
            raise ConfigError("density must be positive")
        if self.exclusion_radius_um < 0:
            raise ConfigError("exclusion radius must be non-negative")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        if any(n < 1 for n in self.n_system) or self.n_ancilla < 1:
            raise ConfigError("atom counts must be positive")
        if any(m < 1 for m in self.arrangements):
            raise ConfigError("arrangement counts must be positive")
        if self.area_inflation < 1.0:
            raise ConfigError("area inflation factor must be >= 1")

    def drive(self) -> DriveParams:
        duration = self.t_entangle_us
        if duration is None:
            duration = 1.0 / (4.0 * self.rabi_mhz)
        return DriveParams(rabi_mhz=self.rabi_mhz, c6=self.c6, duration_us=duration)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "density_per_um2": self.density_per_um2,
            "exclusion_radius_um": self.exclusion_radius_um,
            "n_system": list(self.n_system),
            "n_ancilla": self.n_ancilla,
            "arrangements": list(self.arrangements),
            "trials": self.trials,
            "seed": self.seed,
            "area_inflation": self.area_inflation,
            "auto_inflate": self.auto_inflate,
            "drive": {
                "rabi_mhz": self.rabi_mhz,
                "c6_mhz_um6": self.c6,
                "t_entangle_us": self.drive().duration_us,
            },
            "max_system": self.max_system,
        }

    def override(self, **kwargs) -> "RandomGraphConfig":
        return replace(self, **kwargs)


def _require(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"missing required key {key!r} in [{section}]")
    return table[key]


def _load_toml(path: "str | Path") -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def experiment_from_dict(data: dict, label: str = "experiment") -> ExperimentConfig:
    try:
        system = dict(data.get("system", {}))
        ancilla = dict(data.get("ancilla", {}))
        drive = dict(data.get("drive", {}))
        noise = dict(data.get("noise", {}))
        spam = dict(data.get("spam", {}))
        sampling = dict(data.get("sampling", {}))
        estimator = dict(data.get("estimator", {}))
        bme_table = dict(estimator.get("bme", {}))

        positions = system.get("positions_um")
        mcmc_kwargs = {k: bme_table[k] for k in
                       ("chain_length", "burn_in", "thinning", "delta0", "aux_dim",
                        "adapt_interval", "adapt_window", "delta_min") if k in bme_table}
        seeds = sampling.get("seeds")
        if seeds is None:
            n_seeds = int(sampling.get("n_seeds", 1))
            seeds = list(range(n_seeds))
        return ExperimentConfig(
            n_system=int(_require(system, "n_atoms", "system")),
            system_positions=None if positions is None else np.asarray(positions, dtype=float),
            system_radius_um=system.get("radius_um"),
            system_phase_rad=float(system.get("phase_rad", np.pi)),
            n_ancilla=int(ancilla.get("count", 1)),
            ancilla_radius_um=float(_require(ancilla, "radius_um", "ancilla")),
            ancilla_angles_rad=None if "angles_rad" not in ancilla
            else np.asarray(ancilla["angles_rad"], dtype=float),
            n_angles=int(ancilla.get("n_angles", 20)),
            rabi_mhz=float(_require(drive, "rabi_mhz", "drive")),
            detuning_mhz=float(drive.get("detuning_mhz", 0.0)),
            c6=float(drive.get("c6_mhz_um6", DEFAULT_C6)),
            t_init_us=float(_require(drive, "t_init_us", "drive")),
            t_entangle_us=float(_require(drive, "t_entangle_us", "drive")),
            noise=NoiseParams(gamma_ind=float(noise.get("gamma_ind_mhz", 0.0)),
                              gamma_col=float(noise.get("gamma_col_mhz", 0.0))),
            blockade_truncation_um=(None if "blockade_truncation_um" not in noise
                                    else float(noise["blockade_truncation_um"])),
            spam=SpamModel(p10=float(spam.get("p10", 0.0)), p01=float(spam.get("p01", 0.0))),
            shots=int(sampling.get("shots", 550)),
            seeds=tuple(int(s) for s in seeds),
            exact_probabilities=bool(sampling.get("exact_probabilities", False)),
            estimator=str(estimator.get("kind", "both")),
            bme=McmcConfig(**mcmc_kwargs),
            target=data.get("target"),
            label=str(data.get("label", label)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc


def rank_study_from_dict(data: dict, label: str = "rank-study") -> RandomGraphConfig:
    try:
        study = dict(data.get("rank_study", data))
        drive = dict(study.get("drive", {}))
        n_system = study.get("n_system", [1, 2, 3])
        if isinstance(n_system, int):
            n_system = [n_system]
        arrangements = study.get("arrangements", [1, 2, 4, 8])
        if isinstance(arrangements, int):
            arrangements = [arrangements]
        return RandomGraphConfig(
            density_per_um2=float(study.get("density_per_um2", 0.1)),
            exclusion_radius_um=float(study.get("exclusion_radius_um", 5.0)),
            n_system=tuple(int(n) for n in n_system),
            n_ancilla=int(study.get("n_ancilla", 1)),
            arrangements=tuple(int(m) for m in arrangements),
            trials=int(study.get("trials", 100)),
            seed=int(study.get("seed", 0)),
            area_inflation=float(study.get("area_inflation", 1.0)),
            auto_inflate=bool(study.get("auto_inflate", True)),
            rabi_mhz=float(drive.get("rabi_mhz", 1.0)),
            c6=float(drive.get("c6_mhz_um6", DEFAULT_C6)),
            t_entangle_us=drive.get("t_entangle_us"),
            max_system=int(study.get("max_system", 4)),
            label=str(study.get("label", data.get("label", label))),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid rank-study config: {exc}") from exc


def resolve_config_path(name_or_path: "str | Path") -> Path:
    """Resolve a config argument: an existing file, or a bundled preset name."""
    path = Path(name_or_path)
    if path.exists():
        return path
    candidate = PRESET_DIR / f"{Path(name_or_path).stem}.toml"
    if candidate.exists():
        return candidate
    raise ConfigError(
        f"config {name_or_path!r} is neither a file nor a preset "
        f"(available presets: {', '.join(sorted(available_presets()))})"
    )


def available_presets() -> "list[str]":
    return [p.stem for p in PRESET_DIR.glob("*.toml")]


def load_experiment(name_or_path: "str | Path") -> ExperimentConfig:
    path = resolve_config_path(name_or_path)
    data = _load_toml(path)
    if "rank_study" in data:
        raise ConfigError(f"{path} is a rank-study config; use the rank-study command")
    return experiment_from_dict(data, label=path.stem)


def load_rank_study(name_or_path: "str | Path") -> RandomGraphConfig:
    path = resolve_config_path(name_or_path)
    data = _load_toml(path)
    if "rank_study" not in data:
        raise ConfigError(f"{path} is not a rank-study config (missing [rank_study])")
    return rank_study_from_dict(data, label=path.stem)
