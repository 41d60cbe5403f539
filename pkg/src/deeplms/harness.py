"""
Experiment harness
==================

Runs seeded ensembles of LMS, NLMS, RLS and layered predictors on the same
generated signals, aggregates learning curves and writes a comparison
report. Configuration is an INI file (see ``configs/`` and the README for
the accepted keys); unknown sections or keys are rejected.

Output layout for ``run_experiment`` with an output directory::

    <out>/curves/<filter>.csv    n,mse_smoothed,mse_raw
    <out>/report.txt             human-readable comparison
    <out>/config.echo            the configuration exactly as parsed
"""
from __future__ import annotations

import configparser
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .deep import Activation, DeepPredictorState, dead_unit_fraction, deep_init, deep_step
from .errors import ConfigError, DivergenceError, DomainError, NumericalError
from .filters import (
    PredictionTrace,
    RegressorWindow,
    RlsState,
    TapFilterState,
    filter_step,
    run_online,
    window_push,
)
from .metrics import (
    ConvergenceReport,
    LearningCurve,
    convergence_index,
    convergence_report,
    learning_curve,
    steady_state_mse,
)
from .signals import (
    ArSpec,
    SpikeSpec,
    WienerSolution,
    ar_autocorr,
    derive_seed,
    gen_ar,
    inject_spikes,
    process_std,
    wiener_taps,
)

logger = logging.getLogger(__name__)

FILTER_KINDS = ("lms", "nlms", "rls", "deep")
DEFAULT_STEP = {"lms": 0.01, "nlms": 0.1, "rls": 0.0, "deep": 0.003}
DEAD_UNIT_WINDOWS = 500


@dataclass(frozen=True)
class FilterConfig:
    name: str
    kind: str
    order: int = 8
    step_size: Optional[float] = None
    regularizer: float = 1e-8
    forgetting: float = 1.0
    init_scale: float = 100.0
    hidden: tuple = (8, 4)
    activation: str = "relu"
    weight_scale: float = 0.1
    normalized: bool = False
    bias_input: float = 1.0
    output_bias_input: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ConfigError(f"filter {self.name!r}: kind must be one of {FILTER_KINDS}")
        if not self.name or any(c in self.name for c in "/\\ "):
            raise ConfigError(f"invalid filter name {self.name!r}")
        if self.order < 1:
            raise ConfigError(f"filter {self.name!r}: order must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        try:
            object.__setattr__(self, "activation", Activation(self.activation).value)
        except ValueError as exc:
            raise ConfigError(f"filter {self.name!r}: {exc}") from exc

    @property
    def step(self) -> float:
        return DEFAULT_STEP[self.kind] if self.step_size is None else self.step_size


@dataclass(frozen=True)
class SpikeConfig:
    """Spike contamination; ``magnitude_units='std'`` scales by the clean process std."""

    probability: float = 0.005
    magnitude: float = 10.0
    magnitude_units: str = "std"
    seed: int = 0

    def __post_init__(self):
        if self.magnitude_units not in ("absolute", "std"):
            raise ConfigError("spikes.magnitude_units must be 'absolute' or 'std'")
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError("spikes.probability must lie in [0, 1]")

    def spec_for(self, signal: ArSpec, trial: int) -> SpikeSpec:
        magnitude = self.magnitude
        if self.magnitude_units == "std":
            magnitude *= process_std(signal)
        return SpikeSpec(self.probability, magnitude, derive_seed(self.seed, trial))


@dataclass(frozen=True)
class MetricsConfig:
    delta: float = 0.10
    dwell: int = 50
    smoothing_window: int = 51
    ensemble_size: int = 20
    tail_fraction: float = 0.2

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ConfigError("metrics.ensemble_size must be >= 1")
        if self.delta <= 0 or self.dwell < 1 or self.smoothing_window < 1:
            raise ConfigError("metrics.delta must be > 0, dwell and smoothing_window >= 1")
        if not 0.0 < self.tail_fraction <= 1.0:
            raise ConfigError("metrics.tail_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    signal: ArSpec
    filters: tuple
    spikes: Optional[SpikeConfig] = None
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    output: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(self.filters))
        if not self.filters:
            raise ConfigError("an experiment needs at least one [filter <name>] section")
        names = [f.name for f in self.filters]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate filter names in {names}")

    def filter(self, name: str) -> FilterConfig:
        for f in self.filters:
            if f.name == name:
                return f
        raise ConfigError(f"no filter named {name!r}; have {[f.name for f in self.filters]}")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, signal=replace(self.signal, seed=int(seed)))


# -- configuration file -------------------------------------------------------

def _floats(text):
    text = text.strip()
    return tuple(float(t) for t in text.split(",") if t.strip()) if text else ()


def _ints(text):
    text = text.strip()
    return tuple(int(t) for t in text.split(",") if t.strip()) if text else ()


def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text):
    return None if text.strip().lower() in ("", "default", "none") else float(text)


SIGNAL_KEYS = {"coeffs": _floats, "noise_std": float, "length": int, "burn_in": int, "seed": int}
SPIKE_KEYS = {"probability": float, "magnitude": float, "magnitude_units": str.strip, "seed": int}
METRIC_KEYS = {"delta": float, "dwell": int, "smoothing_window": int, "ensemble_size": int,
               "tail_fraction": float}
OUTPUT_KEYS = {"directory": str.strip}
FILTER_KEYS = {"kind": str.strip, "order": int, "step_size": _optional_float,
               "regularizer": float, "forgetting": float, "init_scale": float,
               "hidden": _ints, "activation": str.strip, "weight_scale": float,
               "normalized": _bool, "bias_input": float, "output_bias_input": float,
               "seed": int}


def _section(parser, name, keys):
    values = {}
    for key, raw in parser.items(name):
        if key not in keys:
            raise ConfigError(f"[{name}]: unknown key {key!r} (allowed: {', '.join(keys)})")
        try:
            values[key] = keys[key](raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key} = {raw!r}: {exc}") from exc
    return values


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc

    signal = spikes = output = None
    metrics = MetricsConfig()
    filters = []
    try:
        for name in parser.sections():
            if name == "signal":
                signal = ArSpec(**_section(parser, name, SIGNAL_KEYS))
            elif name == "spikes":
                spikes = SpikeConfig(**_section(parser, name, SPIKE_KEYS))
            elif name == "metrics":
                metrics = MetricsConfig(**_section(parser, name, METRIC_KEYS))
            elif name == "output":
                output = _section(parser, name, OUTPUT_KEYS).get("directory")
            elif name.startswith("filter "):
                values = _section(parser, name, FILTER_KEYS)
                if "kind" not in values:
                    raise ConfigError(f"[{name}]: missing required key 'kind'")
                filters.append(FilterConfig(name=name[len("filter "):].strip(), **values))
            else:
                raise ConfigError(f"unknown section [{name}]")
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    if signal is None:
        raise ConfigError("missing [signal] section")
    return ExperimentConfig(signal, tuple(filters), spikes, metrics, output)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if value is None:
        return "default"
    return str(value)


def dump_config(config: ExperimentConfig) -> str:
    """Serialize ``config``; ``parse_config(dump_config(c)) == c``."""
    out = io.StringIO()

    def section(title, pairs):
        out.write(f"[{title}]\n")
        for key, value in pairs:
            out.write(f"{key} = {_fmt(value)}\n")
        out.write("\n")

    s = config.signal
    section("signal", [("coeffs", s.coeffs), ("noise_std", float(s.noise_std)),
                       ("length", s.length), ("burn_in", s.burn_in), ("seed", s.seed)])
    if config.spikes is not None:
        p = config.spikes
        section("spikes", [("probability", float(p.probability)), ("magnitude", float(p.magnitude)),
                           ("magnitude_units", p.magnitude_units), ("seed", p.seed)])
    m = config.metrics
    section("metrics", [(k, getattr(m, k)) for k in METRIC_KEYS])
    if config.output is not None:
        section("output", [("directory", config.output)])
    for f in config.filters:
        section(f"filter {f.name}", [(key, getattr(f, key)) for key in FILTER_KEYS])
    return out.getvalue()


# -- running ----------------------------------------------------------------

def build_state(fc: FilterConfig, trial: int = 0):
    """Fresh filter state for trial ``trial``; deep predictors get a per-trial init seed."""
    if fc.kind in ("lms", "nlms"):
        return TapFilterState.zeros(fc.order, fc.step, fc.kind, fc.regularizer)
    if fc.kind == "rls":
        return RlsState.initial(fc.order, fc.forgetting, fc.init_scale)
    sizes = [fc.order, *fc.hidden, 1]
    acts = [fc.activation] * len(fc.hidden) + [Activation.IDENTITY]
    return deep_init(sizes, acts, derive_seed(fc.seed, trial), fc.weight_scale,
                     step_size=fc.step, bias_input=fc.bias_input,
                     output_bias_input=fc.output_bias_input, normalized=fc.normalized,
                     regularizer=fc.regularizer)


def run_filter(fc: FilterConfig, series, trial: int = 0):
    """Run one configured filter over ``series``; returns ``(final_state, trace)``."""
    state = build_state(fc, trial)
    step_fn = deep_step if fc.kind == "deep" else filter_step
    return run_online(state, series, step_fn, bias_input=fc.bias_input)


def realize_signal(signal: ArSpec, spikes: Optional[SpikeConfig], trial: int) -> np.ndarray:
    """Realization ``trial`` of the (optionally spike-contaminated) AR signal."""
    series = gen_ar(replace(signal, seed=derive_seed(signal.seed, trial)))
    if spikes is not None:
        series = inject_spikes(series, spikes.spec_for(signal, trial))
    return series


def trial_signal(config: ExperimentConfig, trial: int) -> np.ndarray:
    """Signal for ``trial``; every filter of the experiment sees this same realization."""
    return realize_signal(config.signal, config.spikes, trial)


def oracle_for(config: ExperimentConfig, order: int) -> Optional[WienerSolution]:
    """Wiener predictor of the clean AR process (spikes are not modelled)."""
    s = config.signal
    try:
        return wiener_taps(ar_autocorr(s.coeffs, s.noise_std, order), order)
    except (NumericalError, DomainError):
        return None


@dataclass
class TrialOutcome:
    trace: Optional[PredictionTrace] = None
    params: Optional[np.ndarray] = None
    dead_fraction: Optional[float] = None
    divergence_step: Optional[int] = None
    failure: Optional[str] = None


def _final_params(state):
    if isinstance(state, DeepPredictorState):
        return None
    return state.parameters()


def _tail_windows(series, order, bias_input, count):
    window = RegressorWindow.zeros(order, bias_input)
    windows = []
    start = max(0, len(series) - count)
    for n, d in enumerate(series):
        if n >= start:
            windows.append(window)
        window = window_push(window, d)
    return windows


def run_trial(config: ExperimentConfig, trial: int) -> list:
    series = trial_signal(config, trial)
    outcomes = []
    for fc in config.filters:
        try:
            state, trace = run_filter(fc, series, trial)
        except DivergenceError as exc:
            logger.warning("filter %s diverged in trial %d: %s", fc.name, trial, exc)
            outcomes.append(TrialOutcome(divergence_step=exc.step, failure=str(exc)))
            continue
        except NumericalError as exc:
            logger.warning("filter %s failed in trial %d: %s", fc.name, trial, exc)
            outcomes.append(TrialOutcome(divergence_step=-1, failure=str(exc)))
            continue
        dead = None
        if isinstance(state, DeepPredictorState):
            dead = dead_unit_fraction(
                state, _tail_windows(series, fc.order, fc.bias_input, DEAD_UNIT_WINDOWS))
        outcomes.append(TrialOutcome(trace, _final_params(state), dead))
    return outcomes


def _run_trial_args(args):
    return run_trial(*args)


@dataclass
class FilterResult:
    config: FilterConfig
    oracle: Optional[WienerSolution]
    curve: Optional[LearningCurve]
    convergence: Optional[ConvergenceReport]
    trial_indices: tuple  # per-trial convergence index (None: not converged or diverged)
    diverged_trials: tuple  # (trial, step) pairs
    mean_params: Optional[np.ndarray]
    dead_unit_fraction: Optional[float]

    @property
    def name(self):
        return self.config.name

    @property
    def diverged(self) -> bool:
        return bool(self.diverged_trials)

    @property
    def all_diverged(self) -> bool:
        return self.curve is None


@dataclass
class ComparisonReport:
    config: ExperimentConfig
    results: tuple

    def result(self, name: str) -> FilterResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def all_diverged(self) -> bool:
        return all(r.all_diverged for r in self.results)

    def mse_ratio(self, a: str, b: str) -> float:
        ra, rb = self.result(a).convergence, self.result(b).convergence
        if ra is None or rb is None:
            return math.nan
        return ra.steady_state_mse / rb.steady_state_mse

    def paired_wins(self, a: str, b: str) -> int:
        """Trials in which ``a`` converged strictly earlier than ``b`` (never-converged counts as last)."""
        wins = 0
        for ia, ib in zip(self.result(a).trial_indices, self.result(b).trial_indices):
            if ia is not None and (ib is None or ia < ib):
                wins += 1
        return wins

    def to_text(self) -> str:
        return format_report(self)


def _aggregate(config: ExperimentConfig, fc: FilterConfig, outcomes: Sequence[TrialOutcome]):
    m = config.metrics
    oracle = oracle_for(config, fc.order)
    diverged = tuple((t, o.divergence_step) for t, o in enumerate(outcomes)
                     if o.trace is None)
    good = [o for o in outcomes if o.trace is not None]
    indices = []
    for o in outcomes:
        if o.trace is None:
            indices.append(None)
            continue
        c = learning_curve([o.trace], m.smoothing_window)
        indices.append(convergence_index(c, steady_state_mse(c, m.tail_fraction), m.delta, m.dwell))
    if not good:
        return FilterResult(fc, oracle, None, None, tuple(indices), diverged, None, None)
    curve = learning_curve([o.trace for o in good], m.smoothing_window)
    mmse = oracle.mmse if oracle is not None else math.nan
    conv = convergence_report(curve, mmse, m.delta, m.dwell, m.tail_fraction)
    params = None
    if good[0].params is not None:
        params = np.mean([o.params for o in good], axis=0)
    dead = None
    if good[0].dead_fraction is not None:
        dead = float(np.mean([o.dead_fraction for o in good]))
    return FilterResult(fc, oracle, curve, conv, tuple(indices), diverged, params, dead)


def run_experiment(config: ExperimentConfig, output=None, jobs: int = 1,
                   write: bool = True) -> ComparisonReport:
    """Run every filter on every trial signal and aggregate.

    Trials may run in ``jobs`` worker processes; results are merged by trial
    index so the outcome does not depend on scheduling. Artifacts are written
    to ``output`` (or ``config.output``) when ``write`` is true.
    """
    n_trials = config.metrics.ensemble_size
    args = [(config, t) for t in range(n_trials)]
    if jobs > 1 and n_trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_trial = list(pool.map(_run_trial_args, args))
    else:
        per_trial = [run_trial(*a) for a in args]

    results = []
    for k, fc in enumerate(config.filters):
        results.append(_aggregate(config, fc, [outcomes[k] for outcomes in per_trial]))
    report = ComparisonReport(config, tuple(results))

    out = output if output is not None else config.output
    if write and out is not None:
        write_artifacts(report, out)
    return report


def write_artifacts(report: ComparisonReport, out) -> None:
    out = Path(out)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    for r in report.results:
        if r.curve is not None:
            r.curve.to_csv(out / "curves" / f"{r.name}.csv")
    (out / "report.txt").write_text(report.to_text())
    (out / "config.echo").write_text(dump_config(report.config))


def _num(x, spec=".6g"):
    if x is None:
        return "-"
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(x, spec)


def format_report(report: ComparisonReport) -> str:
    cfg = report.config
    s = cfg.signal
    lines = ["Adaptive predictor comparison", "=" * 29, ""]
    lines.append(f"signal: AR{list(s.coeffs)} noise_std={s.noise_std!r} length={s.length} "
                 f"burn_in={s.burn_in} seed={s.seed}")
    if cfg.spikes is not None:
        p = cfg.spikes
        lines.append(f"spikes: probability={p.probability!r} magnitude={p.magnitude!r} "
                     f"({p.magnitude_units}) seed={p.seed} -- stand-in for non-stationary "
                     f"contamination; oracle refers to the clean process")
    m = cfg.metrics
    lines.append(f"metrics: ensemble={m.ensemble_size} smoothing={m.smoothing_window} "
                 f"delta={m.delta!r} dwell={m.dwell} tail_fraction={m.tail_fraction!r}")
    lines.append("")

    header = (f"{'filter':<12}{'kind':<6}{'L':>4}{'step':>10}{'ss_mse':>12}{'oracle_mmse':>13}"
              f"{'excess':>12}{'conv_idx':>10}{'diverged':>10}{'dead_units':>12}")
    lines.append(header)
    lines.append("-" * len(header))
    for r in report.results:
        fc = r.config
        conv = r.convergence
        ss = conv.steady_state_mse if conv else None
        excess = conv.excess_mse if conv else None
        idx = "n/c" if conv is not None and conv.convergence_index is None else (
            _num(conv.convergence_index, "d") if conv else "-")
        mmse = r.oracle.mmse if r.oracle is not None else None
        step = "-" if fc.kind == "rls" else _num(fc.step, ".4g")
        lines.append(f"{fc.name:<12}{fc.kind:<6}{fc.order:>4}{step:>10}{_num(ss):>12}"
                     f"{_num(mmse):>13}{_num(excess):>12}{idx:>10}"
                     f"{len(r.diverged_trials):>10}{_num(r.dead_unit_fraction, '.3f'):>12}")
    lines.append("")

    for r in report.results:
        if r.diverged:
            steps = ", ".join(f"trial {t} at step {n}" for t, n in r.diverged_trials)
            lines.append(f"DIVERGED {r.name}: {steps}")
    if any(r.diverged for r in report.results):
        lines.append("")

    names = [r.name for r in report.results]
    if len(names) > 1:
        width = max(12, max(len(n) for n in names) + 2)
        lines.append("Steady-state MSE ratio (row / column)")
        lines.append(" " * width + "".join(f"{n:>{width}}" for n in names))
        for a in names:
            cells = "".join(f"{_num(report.mse_ratio(a, b), '.4f'):>{width}}" for b in names)
            lines.append(f"{a:<{width}}{cells}")
        lines.append("")
        lines.append(f"Paired trials where row converged strictly before column "
                     f"(of {m.ensemble_size})")
        lines.append(" " * width + "".join(f"{n:>{width}}" for n in names))
        for a in names:
            cells = "".join(f"{('-' if a == b else report.paired_wins(a, b)):>{width}}"
                            for b in names)
            lines.append(f"{a:<{width}}{cells}")
        lines.append("")

    deep = [r for r in report.results if r.config.kind == "deep"]
    linear = [r for r in report.results if r.config.kind != "deep"]
    if deep and linear:
        lines.append("Layered vs linear steady-state MSE (hypothesis: ratio < 1; reported only)")
        for d in deep:
            for r in linear:
                lines.append(f"  {d.name} / {r.name} steady-state MSE ratio: "
                             f"{_num(report.mse_ratio(d.name, r.name), '.6f')}")
        lines.append("")

    lines.append("Per-trial convergence index")
    for r in report.results:
        idx = " ".join("n/c" if i is None else str(i) for i in r.trial_indices)
        lines.append(f"{r.name:<12}{idx}")
    lines.append("")

    for r in report.results:
        if r.mean_params is not None:
            params = ", ".join(f"{v:.6f}" for v in r.mean_params)
            oracle = ("" if r.oracle is None else
                      "  oracle taps: " + ", ".join(f"{v:.6f}" for v in r.oracle.taps))
            lines.append(f"{r.name}: mean final [taps..., bias] = [{params}]{oracle}")
    return "\n".join(lines) + "\n"


# -- sweeps -------------------------------------------------------------------

SWEEP_PARAMS = ("step_size", "order")


@dataclass(frozen=True)
class SweepRow:
    value: float
    steady_state_mse: Optional[float]
    convergence_index: Optional[int]
    excess_mse: Optional[float]
    diverged_trials: int
    trials: int


def sweep(config: ExperimentConfig, filter_name: str, param: str,
          values: Sequence[float], jobs: int = 1) -> list:
    """Rerun one filter over a grid of step sizes or orders."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}")
    base = config.filter(filter_name)
    rows = []
    for v in values:
        v = int(v) if param == "order" else float(v)
        fc = replace(base, **{param: v})
        report = run_experiment(replace(config, filters=(fc,)), jobs=jobs, write=False)
        r = report.results[0]
        conv = r.convergence
        rows.append(SweepRow(v, conv.steady_state_mse if conv else None,
                             conv.convergence_index if conv else None,
                             conv.excess_mse if conv else None,
                             len(r.diverged_trials), config.metrics.ensemble_size))
        logger.info("sweep %s=%r: %s", param, v, rows[-1])
    return rows


def write_sweep_csv(rows, param: str, path) -> None:
    def cell(x):
        if x is None:
            return ""
        return repr(float(x)) if isinstance(x, float) else str(x)

    with open(path, "w", newline="") as fh:
        fh.write(f"{param},steady_state_mse,convergence_index,excess_mse,"
                 f"diverged_trials,trials,diverged\n")
        for r in rows:
            fh.write(",".join([cell(r.value), cell(r.steady_state_mse),
                               cell(r.convergence_index), cell(r.excess_mse),
                               str(r.diverged_trials), str(r.trials),
                               "true" if r.diverged_trials else "false"]) + "\n")


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
