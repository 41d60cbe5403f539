"""Command-line entry point: ``deeplms {generate,run,compare,sweep}``.

Exit codes: 0 success (including partial divergence, which is flagged in the
report), 1 usage/configuration/I-O error, 2 every filter diverged.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import AdaptiveError, ConfigError, DivergenceError, NumericalError
from .harness import (
    SWEEP_PARAMS,
    ExperimentConfig,
    ensure_dir,
    load_config,
    realize_signal,
    run_experiment,
    run_filter,
    sweep,
    trial_signal,
    write_sweep_csv,
)
from .signals import ArSpec, read_series_csv, write_series_csv

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2

logger = logging.getLogger("deeplms")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deeplms", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, config_required):
        p.add_argument("--config", required=config_required, help="experiment INI file")
        p.add_argument("--seed", type=int, help="override [signal] seed")
        p.add_argument("--out", help="output directory (default: [output] directory)")

    g = sub.add_parser("generate", help="write one trial signal as n,value CSV")
    common(g, False)
    g.add_argument("--coeffs", type=_float_list, help="AR coefficients, e.g. 0.5,-0.3")
    g.add_argument("--noise-std", type=float)
    g.add_argument("--length", type=int)
    g.add_argument("--burn-in", type=int)
    g.add_argument("--trial", type=int, default=0, help="ensemble trial index (default 0)")

    r = sub.add_parser("run", help="run a single filter, write its trace CSV")
    common(r, True)
    r.add_argument("--filter", help="filter section name (default: first filter)")
    r.add_argument("--trial", type=int, default=0)
    r.add_argument("--input", help="use this n,value CSV instead of a generated signal")

    c = sub.add_parser("compare", help="run the full experiment and write the report")
    common(c, True)
    c.add_argument("--jobs", type=int, default=1, help="worker processes for trials")

    s = sub.add_parser("sweep", help="grid over step size or order for one filter")
    common(s, True)
    s.add_argument("--filter", required=True)
    s.add_argument("--param", choices=SWEEP_PARAMS, default="step_size")
    s.add_argument("--values", type=_float_list, required=True)
    s.add_argument("--jobs", type=int, default=1)
    return parser


def _out_dir(args, config=None) -> Path:
    out = args.out or (config.output if config is not None else None)
    if out is None:
        raise ConfigError("no output directory: pass --out or set [output] directory")
    return ensure_dir(out)


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def cmd_generate(args) -> int:
    config = _load(args) if args.config else None
    signal = config.signal if config is not None else ArSpec()
    spikes = config.spikes if config is not None else None
    overrides = {"coeffs": args.coeffs, "noise_std": args.noise_std,
                 "length": args.length, "burn_in": args.burn_in}
    if config is None:
        overrides["seed"] = args.seed
    signal = replace(signal, **{k: v for k, v in overrides.items() if v is not None})
    series = realize_signal(signal, spikes, args.trial)
    path = _out_dir(args, config) / "signal.csv"
    write_series_csv(path, series)
    logger.info("wrote %d samples to %s", len(series), path)
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load(args)
    fc = config.filter(args.filter) if args.filter else config.filters[0]
    if args.input:
        try:
            series = read_series_csv(args.input)
        except OSError as exc:
            raise ConfigError(f"cannot read {args.input}: {exc.strerror or exc}") from exc
    else:
        series = trial_signal(config, args.trial)
    out = _out_dir(args, config)
    try:
        _, trace = run_filter(fc, series, args.trial)
    except (DivergenceError, NumericalError) as exc:
        print(f"deeplms: filter {fc.name} diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    trace.to_csv(out / "trace.csv")
    logger.info("wrote %s", out / "trace.csv")
    return EXIT_OK


def cmd_compare(args) -> int:
    config = _load(args)
    out = _out_dir(args, config)
    report = run_experiment(config, output=out, jobs=args.jobs)
    for r in report.results:
        if r.diverged:
            print(f"deeplms: filter {r.name} diverged in {len(r.diverged_trials)} trial(s)",
                  file=sys.stderr)
    return EXIT_DIVERGED if report.all_diverged else EXIT_OK


def cmd_sweep(args) -> int:
    config = _load(args)
    out = _out_dir(args, config)
    rows = sweep(config, args.filter, args.param, args.values, jobs=args.jobs)
    write_sweep_csv(rows, args.param, out / "sweep.csv")
    if all(r.diverged_trials == r.trials for r in rows):
        return EXIT_DIVERGED
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (AdaptiveError, OSError) as exc:
        print(f"deeplms: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
