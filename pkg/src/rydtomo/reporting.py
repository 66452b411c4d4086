"""Report emission: schema-validated JSON, CSV plot data, and rendered figures.

Reports are deterministic byte-for-byte for identical configs and seeds,
except for the ``meta.timestamp`` field.
"""

from __future__ import annotations

import csv
import json
from datetime import datetime, timezone
from importlib.metadata import version as _pkg_version
from pathlib import Path

import jsonschema
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bme import decode_matrix, encode_matrix
from .pipeline import RankStudyResult, ReconstructionReport
from .tomography import export_matrix_csv, save_record

REPORT_SCHEMA = {
    "type": "object",
    "required": ["config", "ensemble", "reference", "angular", "seeds", "summary", "meta"],
    "properties": {
        "config": {"type": "object"},
        "ensemble": {
            "type": "object",
            "required": ["k_rows", "n_parameters", "rank", "rank_ratio", "condition_number"],
            "properties": {
                "k_rows": {"type": "integer"},
                "n_parameters": {"type": "integer"},
                "rank": {"type": "integer"},
                "rank_ratio": {"type": "number"},
                "condition_number": {"type": "number"},
                "singular_values": {"type": "array", "items": {"type": "number"}},
            },
        },
        "reference": {
            "type": "object",
            "required": ["rho_reference", "rho_target", "fidelity_reference_target"],
        },
        "angular": {
            "type": "object",
            "required": ["angles_rad", "model", "measured_mean"],
        },
        "seeds": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["seed", "estimates"],
                "properties": {
                    "seed": {"type": "integer"},
                    "estimates": {"type": "object"},
                    "spam_clip_l1": {"type": "array"},
                },
            },
        },
        "summary": {"type": "object"},
        "meta": {
            "type": "object",
            "required": ["package_version", "timestamp"],
        },
    },
}

RANK_REPORT_SCHEMA = {
    "type": "object",
    "required": ["config", "trials", "summary", "meta"],
    "properties": {
        "config": {"type": "object"},
        "trials": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["n_system", "k_rows", "rank", "ratio", "seed"],
            },
        },
        "summary": {"type": "object"},
        "meta": {"type": "object"},
    },
}


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def _meta() -> dict:
    return {"package_version": _pkg_version("rydtomo"), "timestamp": _timestamp()}


def report_to_dict(report: ReconstructionReport) -> dict:
    """JSON-ready report payload (validated against REPORT_SCHEMA)."""
    singular = report.singular_values
    seeds = []
    for seed_result in report.seed_results:
        estimates = {}
        for name, est in seed_result.estimates.items():
            entry = {
                "rho": encode_matrix(est.rho),
                "fidelity_to_reference": float(est.fidelity_to_reference),
                "fidelity_to_target": float(est.fidelity_to_target),
            }
            if est.min_eigenvalue_raw is not None:
                entry["min_eigenvalue_raw"] = float(est.min_eigenvalue_raw)
                entry["trace_raw"] = float(est.trace_raw)
                entry["psd_violation"] = float(max(0.0, -est.min_eigenvalue_raw))
            if est.bme is not None:
                bme_dict = est.bme.to_dict()
                bme_dict.pop("rho_mean")  # already under "rho"
                entry["mcmc"] = bme_dict
            estimates[name] = entry
        seeds.append({
            "seed": int(seed_result.seed),
            "estimates": estimates,
            "spam_clip_l1": [float(v) for v in seed_result.spam_clip_l1],
        })

    summary: dict = {}
    for name in ("pseudoinverse", "bme"):
        stats = report.fidelity_summary(name)
        if stats is None:
            continue
        mean_rho = report.mean_estimate(name)
        stats["rho_mean_over_seeds"] = encode_matrix(mean_rho)
        if name == "pseudoinverse":
            violations = [r.estimates[name].min_eigenvalue_raw for r in report.seed_results
                          if name in r.estimates]
            stats["min_eigenvalue_raw_worst"] = float(min(violations))
        if name == "bme":
            traces = [abs(np.trace(r.estimates[name].rho).real - 1.0)
                      for r in report.seed_results if name in r.estimates]
            eigs = [float(np.linalg.eigvalsh(r.estimates[name].rho).min())
                    for r in report.seed_results if name in r.estimates]
            stats["max_trace_deviation"] = float(max(traces))
            stats["min_eigenvalue"] = float(min(eigs))
        summary[name] = stats

    measured = _measured_mean(report)
    payload = {
        "config": report.config.to_dict(),
        "ensemble": {
            "k_rows": int(report.ensemble.k_rows),
            "n_parameters": int(4**report.config.n_system),
            "rank": int(report.rank),
            "rank_ratio": float(report.rank / 4**report.config.n_system),
            "condition_number": float(singular[0] / singular[-1]) if singular[-1] > 0 else float("inf"),
            "singular_values": [float(s) for s in singular],
        },
        "reference": {
            "rho_reference": encode_matrix(report.rho_reference),
            "rho_target": encode_matrix(report.rho_target),
            "fidelity_reference_target": float(report.fidelity_reference_target),
        },
        "angular": {
            "angles_rad": [float(a) for a in report.config.angles()],
            "model": [[float(p) for p in row] for row in report.model_probabilities],
            "measured_mean": [[float(p) for p in row] for row in measured],
        },
        "seeds": seeds,
        "summary": summary,
        "meta": _meta(),
    }
    jsonschema.validate(payload, REPORT_SCHEMA)
    return payload


def _measured_mean(report: ReconstructionReport) -> np.ndarray:
    return np.mean([r.corrected_probabilities for r in report.seed_results], axis=0)


def _bitstring_labels(n_atoms: int, n_outcomes: int) -> "list[str]":
    return [format(n, f"0{n_atoms}b") for n in range(n_outcomes)]


def write_angular_csv(path: Path, angles: np.ndarray, probabilities: np.ndarray,
                      n_atoms: int) -> None:
    labels = _bitstring_labels(n_atoms, probabilities.shape[1])
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["theta_rad"] + [f"p_{label}" for label in labels])
        for theta, row in zip(angles, probabilities):
            writer.writerow([repr(float(theta))] + [repr(float(p)) for p in row])


def write_density_matrix_csv(path: Path, matrices: "dict[str, np.ndarray]",
                             n_qubits: int) -> None:
    names = list(matrices)
    dim = 2**n_qubits
    labels = _bitstring_labels(n_qubits, dim)
    header = ["row", "col"]
    for name in names:
        header += [f"{name}_re", f"{name}_im"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for r in range(dim):
            for c in range(dim):
                cells = [labels[r], labels[c]]
                for name in names:
                    value = matrices[name][r, c]
                    cells += [repr(float(value.real)), repr(float(value.imag))]
                writer.writerow(cells)


def plot_angular_profiles(path: Path, angles: np.ndarray, measured: np.ndarray,
                          model: np.ndarray, n_atoms: int, max_traces: int = 6) -> None:
    """Polar plot of the most prominent bitstring probabilities vs ancilla angle."""
    labels = _bitstring_labels(n_atoms, model.shape[1])
    order = np.argsort(model.max(axis=0))[::-1][:max_traces]
    fig, ax = plt.subplots(subplot_kw={"projection": "polar"}, figsize=(6, 6))
    closed = np.append(angles, angles[0] + 2 * np.pi)
    for idx in order:
        color = ax.plot(closed, np.append(model[:, idx], model[0, idx]),
                        lw=1.2, label=f"|{labels[idx]}>")[0].get_color()
        ax.plot(angles, measured[:, idx], "o", ms=3.5, color=color)
    ax.set_title("outcome probabilities vs ancilla angle\n(lines: model, dots: measured)")
    ax.legend(loc="upper right", bbox_to_anchor=(1.25, 1.1), fontsize=8)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_density_matrices(path: Path, matrices: "dict[str, np.ndarray]",
                          n_qubits: int) -> None:
    """Side-by-side magnitude maps of reference and reconstructed states."""
    names = list(matrices)
    dim = 2**n_qubits
    labels = _bitstring_labels(n_qubits, dim)
    fig, axes = plt.subplots(1, len(names), figsize=(4.2 * len(names), 4), squeeze=False)
    vmax = max(float(np.abs(m).max()) for m in matrices.values())
    for ax, name in zip(axes[0], names):
        image = ax.imshow(np.abs(matrices[name]), vmin=0.0, vmax=vmax, cmap="viridis")
        ax.set_title(f"|{name}|")
        if dim <= 16:
            ax.set_xticks(range(dim), labels, rotation=90, fontsize=6)
            ax.set_yticks(range(dim), labels, fontsize=6)
        fig.colorbar(image, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_report(report: ReconstructionReport, out_dir: "str | Path") -> "list[Path]":
    """Write report.json, CSV plot data, and figures; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report_to_dict(report)
    written = []

    report_path = out / "report.json"
    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    written.append(report_path)

    angles = report.config.angles()
    n_atoms = report.config.n_system + report.config.n_ancilla
    measured = _measured_mean(report)
    angular_path = out / "angular_probabilities.csv"
    write_angular_csv(angular_path, angles, measured, n_atoms)
    written.append(angular_path)
    model_path = out / "angular_probabilities_model.csv"
    write_angular_csv(model_path, angles, report.model_probabilities, n_atoms)
    written.append(model_path)

    matrices = {"reference": report.rho_reference}
    for name in ("pseudoinverse", "bme"):
        mean_rho = report.mean_estimate(name)
        if mean_rho is not None:
            matrices[name] = mean_rho
    dm_path = out / "density_matrix.csv"
    write_density_matrix_csv(dm_path, matrices, report.config.n_system)
    written.append(dm_path)

    matrix_path = out / "measurement_matrix.csv"
    export_matrix_csv(report.ensemble, matrix_path)
    written.append(matrix_path)

    records_dir = out / "records"
    for seed_result in report.seed_results:
        if seed_result.record is None:
            continue
        records_dir.mkdir(exist_ok=True)
        record_path = records_dir / f"seed_{seed_result.seed}.json"
        save_record(record_path, seed_result.record, report.ensemble.geometries,
                    report.config.drive_entangle(), report.config.spam,
                    seed=seed_result.seed)
        written.append(record_path)

    fig_angular = out / "angular_probabilities.png"
    plot_angular_profiles(fig_angular, angles, measured, report.model_probabilities, n_atoms)
    written.append(fig_angular)
    fig_dm = out / "density_matrix.png"
    plot_density_matrices(fig_dm, matrices, report.config.n_system)
    written.append(fig_dm)
    return written


def rank_study_to_dict(result: RankStudyResult) -> dict:
    trials = [
        {
            "n_system": t.n_system,
            "n_arrangements": t.n_arrangements,
            "k_rows": t.k_rows,
            "rank": t.rank,
            "ratio": float(t.ratio),
            "seed": t.seed,
            "area_inflation": float(t.area_inflation),
        }
        for t in result.trials
    ]
    summary: dict = {}
    for t in result.trials:
        key = f"n{t.n_system}_m{t.n_arrangements}"
        cell = summary.setdefault(key, {"n_system": t.n_system,
                                        "n_arrangements": t.n_arrangements,
                                        "k_rows": t.k_rows, "trials": 0, "full_rank": 0})
        cell["trials"] += 1
        cell["full_rank"] += int(t.ratio >= 1.0)
    for cell in summary.values():
        cell["full_rank_fraction"] = cell["full_rank"] / cell["trials"]
    payload = {
        "config": result.config.to_dict(),
        "trials": trials,
        "summary": summary,
        "meta": _meta(),
    }
    jsonschema.validate(payload, RANK_REPORT_SCHEMA)
    return payload


def write_rank_csv(path: Path, result: RankStudyResult) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["N", "K", "ratio", "seed"])
        for t in result.trials:
            writer.writerow([t.n_system, t.k_rows, repr(float(t.ratio)), t.seed])


def plot_rank_study(path: Path, result: RankStudyResult) -> None:
    """Scatter of rank ratio over (N, log4 K), with the K = 4**N threshold line."""
    n_vals = np.array([t.n_system for t in result.trials], dtype=float)
    log4k = np.array([np.log(t.k_rows) / np.log(4.0) for t in result.trials])
    ratio = np.array([t.ratio for t in result.trials])
    rng = np.random.Generator(np.random.PCG64(0))
    jitter = rng.uniform(-0.12, 0.12, size=n_vals.shape)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    scatter = ax.scatter(n_vals + jitter, log4k, c=ratio, s=18, cmap="coolwarm_r",
                         vmin=0.0, vmax=1.0)
    ns = np.array(sorted(set(n_vals)))
    ax.plot(ns, ns, "r-", lw=1.5, label="K = 4^N")
    ax.set_xlabel("system atoms N")
    ax.set_ylabel("log4 K")
    ax.set_xticks(ns)
    fig.colorbar(scatter, ax=ax, label="rank / 4^N")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_rank_report(result: RankStudyResult, out_dir: "str | Path") -> "list[Path]":
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = rank_study_to_dict(result)
    written = []
    report_path = out / "rank_report.json"
    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    written.append(report_path)
    csv_path = out / "rank_study.csv"
    write_rank_csv(csv_path, result)
    written.append(csv_path)
    fig_path = out / "rank_study.png"
    plot_rank_study(fig_path, result)
    written.append(fig_path)
    return written


def render_from_report(run_dir: "str | Path") -> "list[Path]":
    """Re-render CSV files and figures from a saved report.json / rank_report.json."""
    run = Path(run_dir)
    written: "list[Path]" = []
    report_path = run / "report.json"
    rank_path = run / "rank_report.json"
    if report_path.exists():
        payload = json.loads(report_path.read_text())
        jsonschema.validate(payload, REPORT_SCHEMA)
        angles = np.asarray(payload["angular"]["angles_rad"])
        measured = np.asarray(payload["angular"]["measured_mean"])
        model = np.asarray(payload["angular"]["model"])
        n_atoms = int(np.log2(model.shape[1]))
        n_qubits = int(np.log2(len(payload["reference"]["rho_reference"])))
        write_angular_csv(run / "angular_probabilities.csv", angles, measured, n_atoms)
        write_angular_csv(run / "angular_probabilities_model.csv", angles, model, n_atoms)
        matrices = {"reference": decode_matrix(payload["reference"]["rho_reference"])}
        for name in ("pseudoinverse", "bme"):
            if name in payload["summary"]:
                matrices[name] = decode_matrix(payload["summary"][name]["rho_mean_over_seeds"])
        write_density_matrix_csv(run / "density_matrix.csv", matrices, n_qubits)
        plot_angular_profiles(run / "angular_probabilities.png", angles, measured, model, n_atoms)
        plot_density_matrices(run / "density_matrix.png", matrices, n_qubits)
        written += [run / "angular_probabilities.csv", run / "angular_probabilities_model.csv",
                    run / "density_matrix.csv", run / "angular_probabilities.png",
                    run / "density_matrix.png"]
    elif rank_path.exists():
        payload = json.loads(rank_path.read_text())
        jsonschema.validate(payload, RANK_REPORT_SCHEMA)
        from .config import rank_study_from_dict
        from .pipeline import RankTrial

        trials = [RankTrial(n_system=t["n_system"], n_arrangements=t["n_arrangements"],
                            k_rows=t["k_rows"], rank=t["rank"], seed=t["seed"],
                            area_inflation=t.get("area_inflation", 1.0))
                  for t in payload["trials"]]
        result = RankStudyResult(config=rank_study_from_dict(payload["config"]), trials=trials)
        write_rank_csv(run / "rank_study.csv", result)
        plot_rank_study(run / "rank_study.png", result)
        written += [run / "rank_study.csv", run / "rank_study.png"]
    else:
        raise FileNotFoundError(f"no report.json or rank_report.json in {run}")
    return written
