#!/usr/bin/env python3
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

# ---------------------------------------------------------------------------
# Import the runner whether this script is executed as a module inside the
# vecal package or run directly via `python vecal/cli.py`.
# ---------------------------------------------------------------------------

if __package__ in (None, ""):
    sys.path.append(str(Path(__file__).resolve().parent.parent))
    from vecal import __version__  # type: ignore
    from vecal.config import default_out_dir, load_run_config, parse_groups_flag  # type: ignore
    from vecal.errors import UsageError, VecalError  # type: ignore
    from vecal.logger import setup_logging  # type: ignore
    from vecal.models import ModelKind, VehicleMode  # type: ignore
    from vecal.runner import ExperimentRunner  # type: ignore
    from vecal.synth import SynthConfig  # type: ignore
else:
    from . import __version__
    from .config import default_out_dir, load_run_config, parse_groups_flag
    from .errors import UsageError, VecalError
    from .logger import setup_logging
    from .models import ModelKind, VehicleMode
    from .runner import ExperimentRunner
    from .synth import SynthConfig

EXIT_INTERRUPTED = 130


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', help='Output directory (default: $VECAL_OUT_DIR or ./vecal_out)')
    common.add_argument('--config', help='Path to a JSON config file (default: ~/.vecal_profiles.json)')
    common.add_argument('--profile', help='Profile name inside the config file')
    common.add_argument('--log-file', help='Path to a file to save structured JSON logs')
    common.add_argument('--verbose', action='store_true', help='Log per-iteration solver events')
    common.add_argument('--workers', type=positive_int, help='Parallel workers (default: 4)')
    common.add_argument('--seed', type=int, help='Seed for synthetic data (default: 0)')
    common.add_argument('--metric', choices=['conventional', 'paper-literal'],
                        help='RSS/RMSE aggregation (default: conventional)')
    common.add_argument('--bins', type=positive_int, help='Residual histogram bins (default: 50)')
    common.add_argument('--dt', type=float, help='Resampling step in seconds (default: 1.0)')
    common.add_argument('--min-speed', type=float, help='Drop samples slower than this, m/s (default: 8.941)')
    common.add_argument('--zero-accel-floor', type=float,
                        help='Drop zero-acceleration samples below this energy, J (default: 25000)')
    common.add_argument('--train-ratio', type=float, help='Training share of each split (default: 0.8)')
    common.add_argument('--split-seed', type=int, help='Seed of the train/test shuffle')
    common.add_argument('--split-strategy', choices=['seeded_shuffle', 'sequential_prefix'],
                        help='How training samples are chosen (default: seeded_shuffle)')
    common.add_argument('--max-iters', type=non_negative_int, help='Gauss-Newton iteration limit (default: 200)')
    common.add_argument('--groups', help='Run groups, e.g. "1:1,4,7;2:2,5,8;3:3,6,9"')

    parser = argparse.ArgumentParser(
        prog='vecal',
        description='Calibrate and verify microscopic vehicle energy-consumption models.',
    )
    parser.add_argument('--version', action='version', version=f'vecal {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    synth = sub.add_parser('synth', parents=[common], help='Generate a synthetic dataset')
    synth.add_argument('--runs', type=positive_int, default=9, help='Runs per vehicle mode (default: 9)')
    synth.add_argument('--run-length', type=positive_int, default=300, help='Ticks per run (default: 300)')
    synth.add_argument('--noise-rel', type=float, default=0.05, help='Relative energy noise (default: 0.05)')
    synth.add_argument('--noise-sigma', type=float, default=0.0, help='Absolute energy noise, J (default: 0)')
    synth.add_argument('--hv-noise-factor', type=float, default=2.0,
                       help='Noise multiplier for HV runs (default: 2.0)')
    synth.add_argument('--null-control', action='store_true',
                       help='Generate HV runs from the ACC truth with ACC noise')

    process = sub.add_parser('process', parents=[common], help='Turn raw OBD CSVs into cleaned energy samples')
    process.add_argument('inputs', nargs='+', help='OBD CSV files or dataset manifest.json files')
    process.add_argument('--allow-unsorted', action='store_true', help='Sort rows by timestamp within each run')

    fit = sub.add_parser('fit', parents=[common], help='Calibrate consumption models')
    fit.add_argument('--samples', help='Cleaned samples CSV (default: <out>/samples.csv)')
    fit.add_argument('--model', default='all', choices=['vtmicro', 'arrb', 'aamicro', 'all'])
    fit.add_argument('--mode', default='all', choices=['acc', 'hv', 'all'])

    evaluate = sub.add_parser('eval', parents=[common], help='Apply fitted models and write prediction traces')
    evaluate.add_argument('--samples', help='Cleaned samples CSV (default: <out>/samples.csv)')
    evaluate.add_argument('--models', nargs='*', help='Model JSON files (default: <out>/models/*.json)')
    evaluate.add_argument('--trace-runs', help='Comma-separated run ids to trace (default: 3)')

    crossval = sub.add_parser('crossval', parents=[common], help='Run the group cross-application tests')
    crossval.add_argument('--samples', help='Cleaned samples CSV (default: <out>/samples.csv)')
    crossval.add_argument('--tests', help='Comma-separated tests: test1, test2, test3 (default: test1,test2)')

    sub.add_parser('report', parents=[common], help='Assemble tables from fit and crossval outputs')
    return parser


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Config settings given explicitly on the command line."""
    overrides: Dict[str, Any] = {
        'dt': args.dt,
        'min_speed': args.min_speed,
        'zero_accel_energy_floor': args.zero_accel_floor,
        'metric_mode': args.metric,
        'bins': args.bins,
        'seed': args.seed,
        'workers': args.workers,
    }
    split = {k: v for k, v in (('train_ratio', args.train_ratio), ('seed', args.split_seed),
                               ('strategy', args.split_strategy)) if v is not None}
    if split:
        overrides['split'] = split
    if args.max_iters is not None:
        overrides['solver'] = {'max_iters': args.max_iters}
    if args.groups:
        overrides['groups'] = parse_groups_flag(args.groups)
    if getattr(args, 'tests', None):
        overrides['tests'] = args.tests
    if getattr(args, 'trace_runs', None):
        try:
            overrides['eval_runs'] = [int(r) for r in args.trace_runs.split(',') if r.strip()]
        except ValueError as e:
            raise UsageError(f"--trace-runs: {e}") from e
    return {k: v for k, v in overrides.items() if v is not None}


def selected(value: str, parse, universe) -> List:
    return list(universe) if value == 'all' else [parse(value)]


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        setup_logging(args.log_file, logging.DEBUG if args.verbose else logging.INFO)
        config_path = Path(args.config).expanduser() if args.config else None
        config = load_run_config(args.profile, config_path, flag_overrides(args))
        out_dir = Path(args.out).expanduser() if args.out else default_out_dir()

        print("=" * 70)
        print(f"vecal {__version__} - {args.command}")
        print(f"Output: {out_dir}")
        print(f"Metric: {config.metric_mode.value}   Workers: {config.workers}")
        print("=" * 70)

        runner = ExperimentRunner(config, out_dir)

        if args.command == 'synth':
            synth_config = SynthConfig(
                seed=config.seed,
                n_runs=args.runs,
                run_length=args.run_length,
                dt=config.dt,
                noise_sigma=args.noise_sigma,
                noise_rel=args.noise_rel,
                hv_noise_factor=args.hv_noise_factor,
                powertrain=config.powertrain,
            )
            if args.null_control:
                synth_config = synth_config.with_overrides(truth_hv=synth_config.truth_acc, hv_noise_factor=1.0)
            written = runner.synthesize(synth_config)
            print(f"\nWrote {len(written)} files to '{out_dir}'")

        elif args.command == 'process':
            samples, report = runner.process([Path(p) for p in args.inputs], allow_unsorted=args.allow_unsorted)
            print("\nCleaning Summary:")
            print(f"- Ticks read: {report.input_count}")
            print(f"- Dropped (low speed): {report.dropped_low_speed}")
            print(f"- Dropped (zero acceleration, low energy): {report.dropped_zero_accel_low_energy}")
            print(f"- Dropped (first tick / no closing SOC): "
                  f"{report.dropped_first_tick} / {report.dropped_no_end_soc}")
            print(f"- Samples kept: {report.output_count}")

        elif args.command == 'fit':
            samples = runner.load_samples(Path(args.samples) if args.samples else None)
            kinds = selected(args.model, ModelKind.parse, ModelKind)
            modes = selected(args.mode, VehicleMode.parse, VehicleMode)
            reports = runner.fit(samples, kinds, modes)
            print("\nFit Summary (adjusted R2: calibration / verification / total):")
            for (mode, kind), r in reports.items():
                print(f"- {kind.cli_name:8s} {mode.value:3s}: {r.r2_adj_train} / {r.r2_adj_test} / {r.r2_adj_all}"
                      f"{'' if r.converged else '  (not converged)'}")

        elif args.command == 'eval':
            samples = runner.load_samples(Path(args.samples) if args.samples else None)
            result = runner.evaluate(samples, [Path(p) for p in args.models] if args.models else None)
            print(f"\nWrote {len(result['traces'])} prediction traces and eval.json")

        elif args.command == 'crossval':
            samples = runner.load_samples(Path(args.samples) if args.samples else None)
            matrices = runner.crossval(samples)
            for name, matrix in matrices.items():
                print(f"\n{name} ({matrix.fit_mode.value} models on {matrix.eval_mode.value} data, "
                      f"{matrix.metric_name} {matrix.metric_mode}):")
                for j, row in zip(matrix.row_groups, matrix.values):
                    print(f"  Group {j} model: " + "  ".join(f"{v:12.3f}" for v in row))

        elif args.command == 'report':
            bundle = runner.report()
            print(f"\nFit table rows: {len(bundle['fits'])}; cross tables: {sorted(bundle['crossval'])}")

        runner.generate_summary_report()

    except KeyboardInterrupt:
        print("\nOperation cancelled by user.", file=sys.stderr)
        return EXIT_INTERRUPTED
    except VecalError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 3
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    print("\nOperation completed.")
    return 0


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
