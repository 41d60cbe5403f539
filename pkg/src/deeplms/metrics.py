"""Learning curves, steady-state MSE and convergence-speed measurement."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError

DEFAULT_DELTA = 0.10
DEFAULT_DWELL = 50
DEFAULT_TAIL_FRACTION = 0.2
DEFAULT_SMOOTHING = 51


@dataclass(frozen=True)
class LearningCurve:
    """Ensemble-mean squared error, raw and after a centered moving average.

    ``start`` is the time index of ``values[0]`` (warm-up steps are dropped).
    """

    values: np.ndarray
    raw: np.ndarray
    ensemble_size: int
    smoothing_window: int
    start: int = 0

    def __len__(self):
        return len(self.values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("n,mse_smoothed,mse_raw\n")
            for i, (s, r) in enumerate(zip(self.values, self.raw)):
                fh.write(f"{self.start + i},{float(s)!r},{float(r)!r}\n")


@dataclass(frozen=True)
class ConvergenceReport:
    steady_state_mse: float
    convergence_index: Optional[int]  # None means not converged
    excess_mse: float

    @property
    def converged(self) -> bool:
        return self.convergence_index is not None


def _errors_of(trace) -> tuple[np.ndarray, int]:
    if hasattr(trace, "error"):
        return np.asarray(trace.error, dtype=float), int(getattr(trace, "warmup", 0))
    return np.asarray(trace, dtype=float), 0


def moving_average(x, window: int) -> np.ndarray:
    """Centered moving average; near the ends the window shrinks to the available samples."""
    x = np.asarray(x, dtype=float)
    if window < 1:
        raise DomainError("smoothing window must be >= 1")
    if window == 1 or x.size == 0:
        return x.copy()
    kernel = np.ones(window)
    sums = np.convolve(x, kernel, mode="same")
    counts = np.convolve(np.ones_like(x), kernel, mode="same")
    return sums / counts


def learning_curve(traces: Sequence, smoothing_window: int = DEFAULT_SMOOTHING) -> LearningCurve:
    """Pointwise mean of ``e(n)^2`` across trials, then smoothed.

    ``traces`` holds :class:`~deeplms.filters.PredictionTrace` objects or
    plain error arrays. Steps before the largest warm-up are excluded.
    """
    if len(traces) == 0:
        raise DomainError("learning curve needs at least one trace")
    pairs = [_errors_of(t) for t in traces]
    lengths = {e.shape[0] for e, _ in pairs}
    if len(lengths) != 1:
        raise DomainError(f"traces have different lengths: {sorted(lengths)}")
    warmup = max(w for _, w in pairs)
    errors = np.stack([e[warmup:] for e, _ in pairs])
    raw = np.mean(errors * errors, axis=0)
    return LearningCurve(moving_average(raw, smoothing_window), raw, len(pairs),
                         smoothing_window, warmup)


def _values_of(curve) -> np.ndarray:
    if isinstance(curve, LearningCurve):
        return curve.values
    return np.asarray(curve, dtype=float)


def steady_state_mse(curve, tail_fraction: float = DEFAULT_TAIL_FRACTION) -> float:
    """Mean of the last ``tail_fraction`` of the curve."""
    values = _values_of(curve)
    if values.size == 0:
        raise DomainError("empty curve")
    if not 0.0 < tail_fraction <= 1.0:
        raise DomainError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    count = max(1, int(round(tail_fraction * values.size)))
    tail = values[-count:]
    # shifted mean: exact for a constant tail
    return float(tail[0] + np.mean(tail - tail[0]))


def convergence_index(curve, steady_state: float, delta: float = DEFAULT_DELTA,
                      dwell: int = DEFAULT_DWELL) -> Optional[int]:
    """Smallest ``n`` with ``curve[m] <= (1 + delta) * steady_state`` for all ``m`` in ``[n, n + dwell)``.

    Returns ``None`` when no full dwell window fits below the threshold.
    """
    if delta <= 0:
        raise DomainError("delta must be > 0")
    if dwell < 1:
        raise DomainError("dwell must be >= 1")
    values = _values_of(curve)
    below = values <= (1.0 + delta) * steady_state
    run = 0
    for i, ok in enumerate(below):
        run = run + 1 if ok else 0
        if run == dwell:
            return i - dwell + 1
    return None


def convergence_report(curve, oracle_mmse: float, delta: float = DEFAULT_DELTA,
                       dwell: int = DEFAULT_DWELL,
                       tail_fraction: float = DEFAULT_TAIL_FRACTION) -> ConvergenceReport:
    ss = steady_state_mse(curve, tail_fraction)
    return ConvergenceReport(ss, convergence_index(curve, ss, delta, dwell), ss - oracle_mmse)
