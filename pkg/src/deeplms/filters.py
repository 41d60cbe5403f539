"""
Linear adaptive predictors
==========================

FIR one-step-ahead prediction with LMS, NLMS and RLS adaptation. Every state
is an immutable value; update functions return a new state and never touch
their inputs, so a state can be shared between threads or kept as a
checkpoint without copying.

The regressor seen by a filter of order ``L`` at time ``n`` is::

    x(n) = [d(n-1), d(n-2), ..., d(n-L), b0]

i.e. ``L`` signal taps, newest first, followed by a constant bias input. The
filter adapts ``L + 1`` parameters: one weight per tap plus a bias weight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import DivergenceError, DomainError, NumericalError

DEFAULT_BIAS_INPUT = 1.0
DEFAULT_NLMS_REGULARIZER = 1e-8
DEFAULT_RLS_INIT_SCALE = 100.0
# |e(n)| beyond this multiple of the running peak |d| is treated as divergence
BLOWUP_FACTOR = 1e6


def _frozen(values, ndim=1) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise DomainError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def _evolve(obj, **changes):
    """Copy of a validated frozen state with some fields replaced, skipping re-validation."""
    new = object.__new__(type(obj))
    new.__dict__.update(obj.__dict__)
    for key, value in changes.items():
        if isinstance(value, np.ndarray):
            value.flags.writeable = False
        new.__dict__[key] = value
    return new


def _all_finite(arr) -> bool:
    return bool(np.isfinite(arr).all())


def _check_finite(x: float, what: str) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"{what} must be finite, got {x!r}")
    return x


@dataclass(frozen=True)
class RegressorWindow:
    """The ``L`` most recent samples (newest first) plus the constant bias input."""

    taps: np.ndarray
    bias_input: float = DEFAULT_BIAS_INPUT

    def __post_init__(self):
        object.__setattr__(self, "taps", _frozen(self.taps))
        object.__setattr__(self, "bias_input", float(self.bias_input))

    @classmethod
    def zeros(cls, order: int, bias_input: float = DEFAULT_BIAS_INPUT) -> "RegressorWindow":
        if order < 1:
            raise DomainError(f"window order must be >= 1, got {order}")
        return cls(np.zeros(order), bias_input)

    @property
    def order(self) -> int:
        return self.taps.shape[0]

    def regressor(self) -> np.ndarray:
        """Full input vector ``[taps..., b0]`` seen by the filter weights."""
        return np.append(self.taps, self.bias_input)

    def push(self, sample: float) -> "RegressorWindow":
        return window_push(self, sample)


@dataclass(frozen=True)
class TapFilterState:
    """Weights of an LMS or NLMS filter.

    ``step_size`` is the LMS step ``mu`` or the NLMS relaxation ``lambda``
    depending on ``algorithm``; ``regularizer`` is only used by NLMS.
    """

    weights: np.ndarray
    bias_weight: float = 0.0
    step_size: float = 0.01
    regularizer: float = DEFAULT_NLMS_REGULARIZER
    algorithm: str = "lms"

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "bias_weight", float(self.bias_weight))
        if self.algorithm not in ("lms", "nlms"):
            raise DomainError(f"unknown tap-filter algorithm {self.algorithm!r}")
        if self.regularizer < 0:
            raise DomainError("regularizer must be >= 0")
        if self.order < 1:
            raise DomainError("filter order must be >= 1")

    @classmethod
    def zeros(cls, order: int, step_size: float, algorithm: str = "lms",
              regularizer: float = DEFAULT_NLMS_REGULARIZER) -> "TapFilterState":
        return cls(np.zeros(order), 0.0, step_size, regularizer, algorithm)

    @property
    def order(self) -> int:
        return self.weights.shape[0]

    def parameters(self) -> np.ndarray:
        return np.append(self.weights, self.bias_weight)


@dataclass(frozen=True)
class RlsState:
    """Recursive least squares state.

    ``p_matrix`` is the (L+1)x(L+1) inverse correlation estimate over the
    full regressor including the bias input.
    """

    weights: np.ndarray
    bias_weight: float
    p_matrix: np.ndarray
    forgetting: float = 1.0
    init_scale: float = DEFAULT_RLS_INIT_SCALE

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "bias_weight", float(self.bias_weight))
        object.__setattr__(self, "p_matrix", _frozen(self.p_matrix, ndim=2))
        n = self.order + 1
        if self.p_matrix.shape != (n, n):
            raise DomainError(f"p_matrix must be {n}x{n}, got {self.p_matrix.shape}")
        if not 0.0 < self.forgetting <= 1.0:
            raise DomainError(f"forgetting factor must lie in (0, 1], got {self.forgetting}")
        if self.init_scale <= 0:
            raise DomainError("init_scale must be > 0")

    @classmethod
    def initial(cls, order: int, forgetting: float = 1.0,
                init_scale: float = DEFAULT_RLS_INIT_SCALE) -> "RlsState":
        if order < 1:
            raise DomainError("filter order must be >= 1")
        return cls(np.zeros(order), 0.0, init_scale * np.eye(order + 1),
                   forgetting, init_scale)

    @property
    def order(self) -> int:
        return self.weights.shape[0]

    def parameters(self) -> np.ndarray:
        return np.append(self.weights, self.bias_weight)


class PredictionStep(NamedTuple):
    n: int
    desired: float
    predicted: float
    error: float


FilterState = Union[TapFilterState, RlsState]


def window_push(window: RegressorWindow, sample: float) -> RegressorWindow:
    """Shift ``sample`` in at position 0 and drop the oldest tap."""
    sample = _check_finite(sample, "sample")
    taps = np.empty_like(window.taps)
    taps[0] = sample
    taps[1:] = window.taps[:-1]
    return _evolve(window, taps=taps)


def _check_order(state, window: RegressorWindow):
    if window.order != state.order:
        raise DomainError(
            f"window has {window.order} taps but the filter has order {state.order}")


def predict_linear(state: FilterState, window: RegressorWindow) -> float:
    """FIR output ``sum_i w_i d(n-i) + w_0 b0``."""
    _check_order(state, window)
    return float(np.dot(state.weights, window.taps) + state.bias_weight * window.bias_input)


def _finite_or_diverge(state, new_weights, new_bias, what):
    if not (_all_finite(new_weights) and math.isfinite(new_bias)):
        raise DivergenceError(f"{what} produced non-finite weights", state=state)


def lms_update(state: TapFilterState, window: RegressorWindow, error: float) -> TapFilterState:
    """Stochastic-gradient step ``w <- w + mu * e * x`` on taps and bias weight."""
    _check_order(state, window)
    if not math.isfinite(error):
        raise DivergenceError(f"non-finite error {error!r}", state=state)
    scale = state.step_size * error
    weights = state.weights + scale * window.taps
    bias = state.bias_weight + scale * window.bias_input
    _finite_or_diverge(state, weights, bias, "LMS update")
    return _evolve(state, weights=weights, bias_weight=float(bias))


def nlms_update(state: TapFilterState, window: RegressorWindow, error: float) -> TapFilterState:
    """Normalized step ``w <- w + lambda * e * x / (||x||^2 + eps)``.

    The norm includes the bias input, so the step is a relaxed orthogonal
    projection of the full parameter vector onto the hyperplane defined by
    the current sample.
    """
    _check_order(state, window)
    if not math.isfinite(error):
        raise DivergenceError(f"non-finite error {error!r}", state=state)
    energy = float(np.dot(window.taps, window.taps)) + window.bias_input ** 2
    denom = energy + state.regularizer
    if denom == 0.0:
        raise DomainError("NLMS normalization is zero (all-zero window, b0=0 and eps=0)")
    scale = state.step_size * error / denom
    weights = state.weights + scale * window.taps
    bias = state.bias_weight + scale * window.bias_input
    _finite_or_diverge(state, weights, bias, "NLMS update")
    return _evolve(state, weights=weights, bias_weight=float(bias))


def rls_update(state: RlsState, window: RegressorWindow,
               desired: float, n: int = 0) -> tuple[RlsState, PredictionStep]:
    """One exponentially weighted RLS recursion.

    Returns the updated state and the a priori prediction step.
    """
    _check_order(state, window)
    desired = _check_finite(desired, "desired")
    x = window.regressor()
    theta = state.parameters()
    predicted = float(theta @ x)
    error = desired - predicted
    if not math.isfinite(error):
        raise DivergenceError("non-finite RLS prediction", state=state, step=n)

    rho = state.forgetting
    px = state.p_matrix @ x
    gain = px / (rho + x @ px)
    theta = theta + gain * error
    p = (state.p_matrix - np.outer(gain, px)) / rho
    p = 0.5 * (p + p.T)
    if not (_all_finite(theta) and _all_finite(p)):
        raise DivergenceError("RLS update produced non-finite values", state=state, step=n)
    try:
        np.linalg.cholesky(p)
    except np.linalg.LinAlgError as exc:
        eig = np.linalg.eigvalsh(p)
        raise NumericalError(
            f"RLS inverse-correlation matrix lost positive definiteness at step {n} "
            f"(min eigenvalue {eig[0]:.3e}, max {eig[-1]:.3e}); "
            f"try a larger forgetting factor or smaller init_scale") from exc

    new = _evolve(state, weights=theta[:-1].copy(), bias_weight=float(theta[-1]), p_matrix=p)
    return new, PredictionStep(n, desired, predicted, error)


def filter_step(state: FilterState, window: RegressorWindow,
                desired: float, n: int = 0) -> tuple[FilterState, PredictionStep]:
    """Predict with the current weights, form the error, then adapt."""
    if isinstance(state, RlsState):
        return rls_update(state, window, desired, n)
    if not isinstance(state, TapFilterState):
        raise DomainError(f"unsupported filter state {type(state).__name__}")
    desired = _check_finite(desired, "desired")
    predicted = predict_linear(state, window)
    error = desired - predicted
    update = nlms_update if state.algorithm == "nlms" else lms_update
    try:
        new = update(state, window, error)
    except DivergenceError as exc:
        exc.step = n
        raise
    return new, PredictionStep(n, desired, predicted, error)


@dataclass(frozen=True)
class PredictionTrace:
    """Per-step record of an online run; steps ``n < warmup`` used a zero-padded window."""

    n: np.ndarray
    desired: np.ndarray
    predicted: np.ndarray
    error: np.ndarray
    warmup: int = 0

    def __len__(self):
        return len(self.n)

    @classmethod
    def from_steps(cls, steps: Sequence[PredictionStep], warmup: int = 0) -> "PredictionTrace":
        if steps:
            n, d, p, e = (np.asarray(c) for c in zip(*steps))
        else:
            n, d, p, e = np.zeros(0, int), np.zeros(0), np.zeros(0), np.zeros(0)
        return cls(n.astype(int), d.astype(float), p.astype(float), e.astype(float), warmup)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("n,desired,predicted,error\n")
            for row in zip(self.n, self.desired, self.predicted, self.error):
                fh.write(f"{int(row[0])},{float(row[1])!r},{float(row[2])!r},{float(row[3])!r}\n")


def run_online(state, series, step_fn=None, bias_input: float = DEFAULT_BIAS_INPUT,
               blowup_factor: Optional[float] = BLOWUP_FACTOR):
    """Run a predictor over ``series`` one sample at a time.

    The window starts zero-padded; ``series[n]`` is the desired value at step
    ``n`` and is pushed into the window afterwards. ``step_fn`` defaults to
    :func:`filter_step`; pass :func:`deeplms.deep.deep_step` for the layered
    predictor. Returns ``(final_state, trace)``.

    Raises :class:`DivergenceError` (with ``step`` set) on any non-finite
    value, or when ``|e(n)|`` exceeds ``blowup_factor`` times the largest
    ``|d|`` seen so far (floored at 1); ``blowup_factor=None`` disables the
    magnitude check.
    """
    if step_fn is None:
        step_fn = filter_step
    order = _state_order(state)
    window = RegressorWindow.zeros(order, bias_input)
    steps = []
    peak = 1.0
    for n, d in enumerate(np.asarray(series, dtype=float)):
        new_state, step = step_fn(state, window, d, n)
        peak = max(peak, abs(d))
        if blowup_factor is not None and abs(step.error) > blowup_factor * peak:
            raise DivergenceError(
                f"prediction error {step.error:.3e} exceeds {blowup_factor:g} x signal peak",
                state=state, step=n)
        state = new_state
        steps.append(step)
        window = window_push(window, d)
    return state, PredictionTrace.from_steps(steps, warmup=order)


def _state_order(state) -> int:
    order = getattr(state, "order", None)
    if order is None:
        raise DomainError(f"cannot determine input order of {type(state).__name__}")
    return order
