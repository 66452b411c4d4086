"""Tests for config loading, the end-to-end pipelines, reporting, and the CLI."""

import json
import warnings

import numpy as np
import pytest

from rydtomo import bme, qcore
from rydtomo import tomography as tg
from rydtomo.cli import main
from rydtomo.model import NoiseParams
from rydtomo.config import (
    ConfigError,
    ExperimentConfig,
    RandomGraphConfig,
    available_presets,
    load_experiment,
    load_rank_study,
)
from rydtomo.pipeline import (
    PackingInfeasibleError,
    generate_random_graph,
    generate_random_graph_with_meta,
    run_rank_study,
    run_tomography_pipeline,
)
from rydtomo.reporting import emit_rank_report, emit_report, render_from_report, report_to_dict


def fast_bme(**kwargs):
    return bme.McmcConfig(chain_length=8_000, burn_in=2_000, **kwargs)


@pytest.fixture(scope="module")
def exact_bell_report():
    config = load_experiment("bell_n2").override(
        seeds=(0,), exact_probabilities=True, shots=10_000,
        noise=NoiseParams(), spam=tg.SpamModel(),
        bme=bme.McmcConfig(chain_length=20_000, burn_in=5_000))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_tomography_pipeline(config)


@pytest.fixture(scope="module")
def sampled_bell_report():
    config = load_experiment("bell_n2").override(seeds=(0, 1), bme=fast_bme())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_tomography_pipeline(config)


class TestConfigLoading:
    def test_presets_exist(self):
        assert {"bell_n2", "w_n3", "w_n4", "w_n6", "rank_study"} <= set(available_presets())

    def test_bell_preset_values(self):
        config = load_experiment("bell_n2")
        assert config.n_system == 2 and config.n_ancilla == 1
        assert config.rabi_mhz == 0.896
        assert config.t_init_us == 0.387 and config.t_entangle_us == 0.595
        assert config.noise.gamma_col == 0.07 and config.noise.gamma_ind == 0.02
        assert config.spam.p10 == 0.02 and config.spam.p01 == 0.10
        assert config.shots == 550 and len(config.seeds) == 10
        assert config.target_kind == "bell"

    def test_w_presets_table_rows(self):
        w3 = load_experiment("w_n3")
        assert w3.system_radius_um == pytest.approx(5 / np.sqrt(3))
        assert w3.shots == 1300 and w3.noise.gamma_col == 0.05
        w4 = load_experiment("w_n4")
        assert w4.rabi_mhz == 0.855 and w4.ancilla_radius_um == 10.0
        w6 = load_experiment("w_n6")
        assert w6.n_ancilla == 2 and w6.n_system == 6
        assert w6.target_kind == "w"

    def test_missing_file_raises(self):
        with pytest.raises(ConfigError, match="neither a file nor a preset"):
            load_experiment("/nonexistent/config.toml")

    def test_invalid_toml_raises(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[system\nn_atoms = 2")
        with pytest.raises(ConfigError, match="invalid TOML"):
            load_experiment(bad)

    def test_missing_key_raises(self, tmp_path):
        partial = tmp_path / "partial.toml"
        partial.write_text("[system]\nn_atoms = 2\nradius_um = 2.5\n"
                           "[ancilla]\ncount = 1\n")
        with pytest.raises(ConfigError, match="radius_um"):
            load_experiment(partial)

    def test_estimator_validation(self):
        with pytest.raises(ConfigError, match="estimator"):
            ExperimentConfig(n_system=2, system_radius_um=2.5, estimator="mle")

    def test_bell_target_needs_two_atoms(self):
        with pytest.raises(ConfigError, match="2-atom"):
            ExperimentConfig(n_system=3, system_radius_um=2.5, target="bell")

    def test_rank_study_preset(self):
        config = load_rank_study("rank_study")
        assert config.density_per_um2 == 0.1
        assert config.exclusion_radius_um == 5.0
        assert config.drive().duration_us == pytest.approx(0.25)

    def test_config_kind_cross_checks(self, tmp_path):
        with pytest.raises(ConfigError, match="rank-study"):
            load_experiment("rank_study")
        with pytest.raises(ConfigError, match="not a rank-study"):
            load_rank_study("bell_n2")


class TestTomographyPipeline:
    def test_exact_closed_loop(self, exact_bell_report):
        report = exact_bell_report
        est = report.seed_results[0].estimates
        assert est["pseudoinverse"].fidelity_to_reference >= 0.999
        assert est["bme"].fidelity_to_reference >= 0.99
        assert report.rank == 16

    def test_estimator_agreement_on_exact_inputs(self, exact_bell_report):
        est = exact_bell_report.seed_results[0].estimates
        assert qcore.trace_distance(est["pseudoinverse"].rho, est["bme"].rho) <= 0.02

    def test_reference_state_close_to_target(self, sampled_bell_report):
        assert sampled_bell_report.fidelity_reference_target >= 0.99

    def test_raw_inversion_violation_reported(self, sampled_bell_report):
        est = sampled_bell_report.seed_results[0].estimates["pseudoinverse"]
        assert est.min_eigenvalue_raw is not None
        assert est.min_eigenvalue_raw < 0  # finite shots always break positivity here

    def test_bme_estimates_physical(self, sampled_bell_report):
        for seed_result in sampled_bell_report.seed_results:
            rho = seed_result.estimates["bme"].rho
            assert abs(np.trace(rho).real - 1) <= 1e-12
            assert np.linalg.eigvalsh(rho).min() >= -1e-12

    def test_underdetermined_aborts(self):
        config = load_experiment("bell_n2").override(n_angles=1, seeds=(0,))
        with pytest.raises(tg.UnderdeterminedEnsembleError):
            run_tomography_pipeline(config)

    def test_parallel_matches_serial(self, sampled_bell_report):
        config = load_experiment("bell_n2").override(seeds=(0, 1), bme=fast_bme())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            parallel = run_tomography_pipeline(config, parallelism=2)
        for serial_seed, parallel_seed in zip(sampled_bell_report.seed_results,
                                              parallel.seed_results):
            np.testing.assert_array_equal(serial_seed.estimates["bme"].rho,
                                          parallel_seed.estimates["bme"].rho)


class TestReporting:
    def test_report_dict_schema_and_determinism(self, sampled_bell_report):
        first = report_to_dict(sampled_bell_report)
        second = report_to_dict(sampled_bell_report)
        first["meta"]["timestamp"] = second["meta"]["timestamp"] = None
        assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)

    def test_emit_and_rerender(self, sampled_bell_report, tmp_path):
        out = tmp_path / "run"
        files = emit_report(sampled_bell_report, out)
        names = {f.name for f in files}
        assert {"report.json", "angular_probabilities.csv", "angular_probabilities_model.csv",
                "density_matrix.csv", "measurement_matrix.csv",
                "angular_probabilities.png", "density_matrix.png"} <= names
        # angular CSV: one row per angle, one probability column per bitstring
        lines = (out / "angular_probabilities.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 20
        assert len(lines[0].split(",")) == 1 + 8
        rendered = render_from_report(out)
        assert (out / "density_matrix.png").exists()
        assert len(rendered) == 5

    def test_angular_rows_are_distributions(self, sampled_bell_report, tmp_path):
        out = tmp_path / "run2"
        emit_report(sampled_bell_report, out)
        payload = json.loads((out / "report.json").read_text())
        measured = np.asarray(payload["angular"]["measured_mean"])
        np.testing.assert_allclose(measured.sum(axis=1), 1.0, atol=1e-9)
        summary = payload["summary"]
        assert "pseudoinverse" in summary and "bme" in summary
        assert summary["bme"]["max_trace_deviation"] <= 1e-12


class TestRandomGraphs:
    def test_min_distance_honored(self):
        config = RandomGraphConfig(n_system=(3,), trials=1)
        geom = generate_random_graph(config, seed=5)
        positions = geom.positions
        dists = np.linalg.norm(positions[:, None] - positions[None, :], axis=-1)
        off_diag = dists[np.triu_indices(len(positions), k=1)]
        assert off_diag.min() >= config.exclusion_radius_um

    def test_zero_exclusion_is_plain_uniform(self):
        config = RandomGraphConfig(exclusion_radius_um=0.0, n_system=(4,), trials=1)
        geom, inflation = generate_random_graph_with_meta(config, seed=2)
        assert inflation == 1.0
        assert geom.n_atoms == 5

    def test_determinism(self):
        config = RandomGraphConfig(n_system=(2,), trials=1)
        first = generate_random_graph(config, seed=9)
        second = generate_random_graph(config, seed=9)
        np.testing.assert_array_equal(first.positions, second.positions)

    def test_infeasible_packing_raises(self):
        config = RandomGraphConfig(density_per_um2=10.0, exclusion_radius_um=50.0,
                                   n_system=(4,), auto_inflate=False, trials=1)
        with pytest.raises(PackingInfeasibleError):
            generate_random_graph(config, seed=0)

    def test_auto_inflation_recorded(self):
        config = RandomGraphConfig(density_per_um2=0.4, n_system=(3,), trials=1)
        _, inflation = generate_random_graph_with_meta(config, seed=1)
        assert inflation > 1.0


class TestRankStudy:
    def test_single_arrangement_deficient_for_two_qubits(self):
        config = RandomGraphConfig(n_system=(2,), arrangements=(1,), trials=10)
        result = run_rank_study(config)
        assert all(t.ratio < 1.0 for t in result.trials)
        assert all(t.rank <= 8 for t in result.trials)

    def test_ratio_never_exceeds_one(self):
        config = RandomGraphConfig(n_system=(1, 2), arrangements=(1, 4), trials=5)
        result = run_rank_study(config)
        assert all(t.ratio <= 1.0 for t in result.trials)

    def test_sufficient_arrangements_reach_full_rank(self):
        config = RandomGraphConfig(n_system=(2,), arrangements=(3,), trials=10)
        result = run_rank_study(config)
        assert sum(t.ratio >= 1.0 for t in result.trials) >= 9

    def test_long_runtime_guard(self):
        config = RandomGraphConfig(n_system=(5,), arrangements=(1,), trials=1)
        from rydtomo.pipeline import ConfigGuardError

        with pytest.raises(ConfigGuardError, match="max_system"):
            run_rank_study(config)

    def test_csv_and_report(self, tmp_path):
        config = RandomGraphConfig(n_system=(1,), arrangements=(1, 2), trials=3)
        result = run_rank_study(config)
        files = emit_rank_report(result, tmp_path / "rank")
        csv_path = tmp_path / "rank" / "rank_study.csv"
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "N,K,ratio,seed"
        assert len(lines) == 1 + 6
        rendered = render_from_report(tmp_path / "rank")
        assert (tmp_path / "rank" / "rank_study.png").exists()
        assert len(files) == 3 and len(rendered) == 2


class TestAngularSymmetry:
    def test_triangle_model_equivariance(self):
        # rotating the ancilla by 2*pi/3 relabels the triangle's atoms
        # cyclically; the model probabilities must follow exactly.
        config = load_experiment("w_n3").override(n_angles=12, seeds=(0,),
                                                  noise=NoiseParams())
        ensemble = tg.build_measurement_ensemble(config.geometries(), config.drive_entangle())
        from rydtomo.pipeline import simulate_reference_state

        rho = simulate_reference_state(config)
        probs = ensemble.model_probabilities(rho)
        rotated = probs[np.roll(np.arange(12), -4)]  # theta + 2*pi/3
        permuted = probs[:, _cyclic_bit_permutation(3, 1)]
        np.testing.assert_allclose(rotated, permuted, atol=1e-9)


def _cyclic_bit_permutation(n_system: int, n_ancilla: int) -> np.ndarray:
    """Outcome reindexing for a cyclic shift of the system atoms."""
    total = n_system + n_ancilla
    mapping = np.empty(2**total, dtype=int)
    for n in range(2**total):
        bits = [(n >> (total - 1 - q)) & 1 for q in range(total)]
        system = bits[:n_system]
        shifted = system[1:] + system[:1]
        new_bits = shifted + bits[n_system:]
        mapping[n] = int("".join(map(str, new_bits)), 2)
    return mapping


class TestCli:
    def test_validate_ok(self, capsys):
        assert main(["validate", "bell_n2"]) == 0
        assert "valid experiment config" in capsys.readouterr().out

    def test_validate_rank_study(self, capsys):
        assert main(["validate", "rank_study"]) == 0
        assert "rank-study" in capsys.readouterr().out

    def test_missing_config_exit_code(self, capsys):
        assert main(["run", "/no/such/file.toml"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_underdetermined_exit_code(self, tmp_path, capsys):
        config = tmp_path / "thin.toml"
        config.write_text(
            "[system]\nn_atoms = 2\nradius_um = 2.5\n"
            "[ancilla]\ncount = 1\nradius_um = 9.0\nn_angles = 1\n"
            "[drive]\nrabi_mhz = 0.896\nt_init_us = 0.387\nt_entangle_us = 0.595\n"
            "[sampling]\nshots = 100\nseeds = [0]\n")
        assert main(["run", str(config), "--out", str(tmp_path / "out")]) == 3
        assert "under-determined" in capsys.readouterr().err

    def test_run_writes_report(self, tmp_path, capsys):
        config = tmp_path / "quick.toml"
        config.write_text(
            "label = \"quick\"\n"
            "[system]\nn_atoms = 2\nradius_um = 2.5\n"
            "[ancilla]\ncount = 1\nradius_um = 9.0\nn_angles = 6\n"
            "[drive]\nrabi_mhz = 0.896\nt_init_us = 0.387\nt_entangle_us = 0.595\n"
            "[sampling]\nshots = 200\nseeds = [0]\n"
            "[estimator]\nkind = \"pseudoinverse\"\n")
        out = tmp_path / "quickrun"
        assert main(["run", str(config), "--out", str(out)]) == 0
        assert (out / "report.json").exists()
        assert main(["report", str(out)]) == 0
        captured = capsys.readouterr()
        assert "pseudoinverse" in captured.out

    def test_run_respects_out_dir_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TOMO_OUT_DIR", str(tmp_path / "root"))
        config = tmp_path / "quick2.toml"
        config.write_text(
            "label = \"quick2\"\n"
            "[system]\nn_atoms = 1\nradius_um = 0.001\n"
            "[ancilla]\ncount = 1\nradius_um = 9.0\nn_angles = 4\n"
            "[drive]\nrabi_mhz = 0.896\nt_init_us = 0.5\nt_entangle_us = 0.3\n"
            "[sampling]\nshots = 100\nseeds = [0]\n"
            "[estimator]\nkind = \"pseudoinverse\"\n")
        assert main(["run", str(config)]) == 0
        assert (tmp_path / "root" / "quick2" / "report.json").exists()

    def test_rank_study_guard_exit_code(self, tmp_path, capsys):
        config = tmp_path / "big.toml"
        config.write_text("[rank_study]\nn_system = [5]\narrangements = [1]\ntrials = 1\n")
        assert main(["rank-study", str(config), "--out", str(tmp_path / "o")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_report_missing_dir(self, tmp_path, capsys):
        assert main(["report", str(tmp_path / "nothing")]) == 2
