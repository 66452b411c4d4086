"""Command-line interface: seeded tomography runs, rank studies, and reports.

Exit codes: 0 success, 2 configuration error, 3 under-determined measurement
ensemble, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    available_presets,
    load_experiment,
    load_rank_study,
    resolve_config_path,
)
from .model import IntegrationError
from .pipeline import (
    ConfigGuardError,
    PackingInfeasibleError,
    run_rank_study,
    run_tomography_pipeline,
)
from .tomography import UnderdeterminedEnsembleError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNDERDETERMINED = 3
EXIT_NUMERICAL = 4


def _default_out_root() -> Path:
    return Path(os.environ.get("TOMO_OUT_DIR", "runs"))


def _out_dir(args, label: str) -> Path:
    if args.out is not None:
        return Path(args.out)
    return _default_out_root() / label


def _apply_overrides(config, args):
    overrides = {}
    if getattr(args, "seed", None):
        overrides["seeds"] = tuple(args.seed)
    if getattr(args, "shots", None) is not None:
        overrides["shots"] = args.shots
    if getattr(args, "estimator", None) is not None:
        overrides["estimator"] = args.estimator
    return config.override(**overrides) if overrides else config


def _cmd_run(args) -> int:
    config = _apply_overrides(load_experiment(args.config), args)
    from .reporting import emit_report

    report = run_tomography_pipeline(config, parallelism=args.parallel)
    out = _out_dir(args, config.label)
    written = emit_report(report, out)
    for name in ("pseudoinverse", "bme"):
        stats = report.fidelity_summary(name)
        if stats is not None:
            print(f"{name}: F(reference) = {stats['fidelity_to_reference_mean']:.4f}"
                  f" +- {stats['fidelity_to_reference_std']:.4f}"
                  f" | F(target) = {stats['fidelity_to_target_mean']:.4f}")
    print(f"rank {report.rank}/{4**config.n_system}"
          f" over {report.ensemble.n_arrangements} arrangements"
          f" ({report.ensemble.k_rows} rows)")
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


def _cmd_rank_study(args) -> int:
    config = load_rank_study(args.config)
    if getattr(args, "seed", None):
        config = config.override(seed=args.seed[0])
    from .reporting import emit_rank_report

    result = run_rank_study(config, parallelism=args.parallel, allow_large=args.allow_large)
    out = _out_dir(args, config.label)
    written = emit_rank_report(result, out)
    by_cell: "dict[tuple[int, int], list[float]]" = {}
    for t in result.trials:
        by_cell.setdefault((t.n_system, t.k_rows), []).append(t.ratio)
    for (n, k), ratios in sorted(by_cell.items()):
        full = sum(1 for r in ratios if r >= 1.0)
        print(f"N={n} K={k}: full rank in {full}/{len(ratios)} trials")
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    path = resolve_config_path(args.config)
    try:
        config = load_rank_study(path)
        kind = "rank-study"
        details = (f"N sweep {list(config.n_system)}, {config.n_ancilla} ancilla(s), "
                   f"arrangements {list(config.arrangements)}, {config.trials} trials")
    except ConfigError:
        config = load_experiment(path)
        kind = "experiment"
        k_rows = len(config.angles()) * 2 ** (config.n_system + config.n_ancilla)
        details = (f"{config.n_system} system + {config.n_ancilla} ancilla atoms, "
                   f"{len(config.angles())} arrangements (K = {k_rows}, "
                   f"unknowns = {4**config.n_system}), estimator {config.estimator}")
    print(f"{path}: valid {kind} config")
    print(details)
    return EXIT_OK


def _cmd_report(args) -> int:
    from .reporting import render_from_report

    try:
        written = render_from_report(args.run_dir)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"re-rendered {len(written)} files in {args.run_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tomo",
        description="Configurable-ancilla quantum state tomography for Rydberg arrays",
        epilog=f"bundled presets: {', '.join(sorted(available_presets()))}",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_estimator=True):
        p.add_argument("--seed", type=int, action="append",
                       help="override config seeds (repeatable)")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: $TOMO_OUT_DIR/<label>)")
        p.add_argument("--parallel", type=int, default=1,
                       help="worker threads for seeds/arrangements")
        if with_estimator:
            p.add_argument("--shots", type=int, default=None, help="override shots per arrangement")
            p.add_argument("--estimator", choices=("pseudoinverse", "bme", "both"),
                           default=None, help="override estimator selection")

    run_p = sub.add_parser("run", help="run a tomography pipeline from a TOML config")
    run_p.add_argument("config", help="config file path or preset name")
    add_common(run_p)
    run_p.set_defaults(func=_cmd_run)

    rank_p = sub.add_parser("rank-study", help="random-graph measurement-rank study")
    rank_p.add_argument("config", help="config file path or preset name")
    rank_p.add_argument("--allow-large", action="store_true",
                        help="permit long-runtime system sizes beyond max_system")
    add_common(rank_p, with_estimator=False)
    rank_p.set_defaults(func=_cmd_rank_study)

    val_p = sub.add_parser("validate", help="parse and check a config file")
    val_p.add_argument("config", help="config file path or preset name")
    val_p.set_defaults(func=_cmd_validate)

    rep_p = sub.add_parser("report", help="re-render CSV/figures from a finished run")
    rep_p.add_argument("run_dir", type=Path, help="directory containing report.json")
    rep_p.set_defaults(func=_cmd_report)
    return parser


def main(argv: "list[str] | None" = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigGuardError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnderdeterminedEnsembleError as exc:
        print(f"under-determined ensemble: {exc}", file=sys.stderr)
        return EXIT_UNDERDETERMINED
    except (IntegrationError, PackingInfeasibleError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
