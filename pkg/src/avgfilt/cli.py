"""avgfilt command line.

    avgfilt <experiment> [--config FILE] [--preset desk|full] [--seed U64]
                         [--threads K] [--out PATH] [--format csv|json] [overrides...]
    avgfilt plot RESULTS.csv [--out SCRIPT.gp] [--image PNG]

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, NumericalError
from .experiments import EXPERIMENTS, PRESETS, make_config, run_experiment
from .output import emit_results, gnuplot_script, render

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def build_parser():
    parser = _Parser(prog="avgfilt", description="Iterate-averaged 3DVAR / Kalman experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with ExperimentConfig fields")
        p.add_argument("--preset", choices=PRESETS, default="full")
        p.add_argument("--seed", type=_u64)
        p.add_argument("--threads", type=int)
        p.add_argument("--out", dest="output_path", help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--gamma", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--t", type=_float_list)
        p.add_argument("--N", type=int)
        p.add_argument("--n-steps", dest="n_steps", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--beta", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--record-per-decade", dest="record_per_decade", type=int)
        p.add_argument("--resamples", type=int)
        p.add_argument("--quiet", action="store_true", help="suppress the summary on stderr")
    p = sub.add_parser("plot", help="write a gnuplot script for a results CSV")
    p.add_argument("csv")
    p.add_argument("--out", help="script path (default: stdout)")
    p.add_argument("--image", help="PNG the script renders to")
    return parser


_OVERRIDES = ("seed", "threads", "output_path", "format", "gamma", "alpha", "t", "N", "n_steps",
              "trials", "beta", "delta", "record_per_decade", "resamples")


def _load_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _summary(result, cfg):
    print(f"# {result.experiment}: {len(result.rows)} rows, seed {cfg.resolved_seed}", file=sys.stderr)
    for key, fit in result.fits.items():
        label = key if isinstance(key, str) else f"{key[0]} t={key[1]:g}"
        print(f"#   {label}: slope {fit.fitted_slope:+.4f} +- {fit.slope_stderr:.4f} "
              f"(predicted {fit.predicted_exponent:+.4f}) over n in [{fit.fit_window[0]:g}, {fit.fit_window[1]:g}]",
              file=sys.stderr)
    for note in result.notes:
        print(f"#   {note}", file=sys.stderr)


def _run_plot(args):
    script = gnuplot_script(args.csv, args.image)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(script)
    else:
        sys.stdout.write(script)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        if args.command == "plot":
            _run_plot(args)
            return EXIT_OK
        file_values = _load_config_file(args.config) if args.config else {}
        file_values.pop("experiment", None)
        overrides = {k: getattr(args, k) for k in _OVERRIDES}
        cfg = make_config(args.command, args.preset, file_values, **overrides)
        result = run_experiment(cfg)
        if cfg.output_path:
            emit_results(result.rows, cfg.output_path, cfg.format)
        else:
            sys.stdout.write(render(result.rows, cfg.format))
        if not args.quiet:
            _summary(result, cfg)
    except ConfigError as exc:
        print(f"avgfilt: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"avgfilt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"avgfilt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
