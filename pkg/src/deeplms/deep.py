"""
Layered nonlinear LMS predictor
===============================

Each hidden layer is a bank of FIR units evaluated on the same instant: unit
``j`` of the first layer computes ``act(sum_i W[j, i] d(n-i) + c_j b0)`` from
the regressor window, later layers take the previous layer's unit outputs as
their input, and a single identity unit combines the last hidden layer with
its own bias input ``s0`` into the prediction.

Weights adapt online by plain back-propagation of the instantaneous squared
error ``e(n)^2 / 2`` after every sample. With one identity layer the model
collapses to an ordinary LMS filter and the update to the LMS update.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DivergenceError, DomainError
from .filters import DEFAULT_BIAS_INPUT, PredictionStep, RegressorWindow, _all_finite, _evolve


class Activation(str, enum.Enum):
    RELU = "relu"
    IDENTITY = "identity"


def activation_apply(kind, x):
    """Apply ``kind`` elementwise; works on scalars and arrays."""
    kind = Activation(kind)
    if kind is Activation.RELU:
        return np.maximum(x, 0.0)
    return x


def activation_slope(kind, pre) -> np.ndarray:
    # relu subgradient at exactly 0 is taken as 0
    if Activation(kind) is Activation.RELU:
        return (pre > 0.0).astype(float)
    return np.ones_like(pre)


def _readonly(arr, ndim):
    arr = np.array(arr, dtype=float)
    if arr.ndim != ndim:
        raise DomainError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LayerState:
    """One bank of FIR units. Row ``j`` of ``weights`` holds the taps of unit ``j``."""

    weights: np.ndarray
    bias_weights: np.ndarray
    bias_input: float = DEFAULT_BIAS_INPUT
    activation: Activation = Activation.RELU

    def __post_init__(self):
        object.__setattr__(self, "weights", _readonly(self.weights, 2))
        object.__setattr__(self, "bias_weights", _readonly(self.bias_weights, 1))
        object.__setattr__(self, "bias_input", float(self.bias_input))
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.weights.shape[0] != self.bias_weights.shape[0]:
            raise DomainError(
                f"{self.weights.shape[0]} unit rows but {self.bias_weights.shape[0]} bias weights")

    @property
    def units(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class DeepPredictorState:
    """Ordered layer stack plus the SGD configuration.

    ``normalized`` switches the step to ``step_size / (||x||^2 + regularizer)``
    where ``x`` is the input window including its bias input.
    """

    layers: tuple
    step_size: float = 1e-3
    rng_seed: int = 0
    normalized: bool = False
    regularizer: float = 1e-8

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise DomainError("a predictor needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].fan_in != layers[k - 1].units:
                raise DomainError(
                    f"layer {k} expects {layers[k].fan_in} inputs but layer {k - 1} "
                    f"has {layers[k - 1].units} units")
        last = layers[-1]
        if last.units != 1 or last.activation is not Activation.IDENTITY:
            raise DomainError("the output layer must be a single identity unit")

    @property
    def order(self) -> int:
        return self.layers[0].fan_in

    def shapes(self):
        return [layer.weights.shape for layer in self.layers]


class ForwardCache(NamedTuple):
    inputs: tuple  # input vector fed to each layer (window taps for layer 0)
    pre: tuple  # pre-activations per layer
    post: tuple  # post-activations per layer
    window: RegressorWindow


class LayerGrad(NamedTuple):
    weights: np.ndarray
    bias_weights: np.ndarray


def deep_init(layer_sizes: Sequence[int], activations: Optional[Sequence] = None,
              seed: int = 0, init_scale: float = 0.1, *, step_size: float = 1e-3,
              bias_input: float = DEFAULT_BIAS_INPUT, output_bias_input: float = 1.0,
              normalized: bool = False, regularizer: float = 1e-8) -> DeepPredictorState:
    """Build a predictor with weights uniform in ``[-init_scale, init_scale]``.

    ``layer_sizes`` starts with the input order ``L`` and ends with 1, e.g.
    ``[8, 4, 1]`` is 8 taps -> 4 hidden units -> output. ``activations`` has
    one entry per layer after the input; by default every hidden layer is relu
    and the output is identity. Bias weights start at zero.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise DomainError("layer_sizes needs the input order and at least the output size")
    if any(s < 1 for s in sizes):
        raise DomainError(f"layer sizes must be positive, got {sizes}")
    if sizes[-1] != 1:
        raise DomainError("the last layer size must be 1")
    if activations is None:
        activations = [Activation.RELU] * (len(sizes) - 2) + [Activation.IDENTITY]
    activations = [Activation(a) for a in activations]
    if len(activations) != len(sizes) - 1:
        raise DomainError(f"need {len(sizes) - 1} activations, got {len(activations)}")
    if init_scale < 0:
        raise DomainError("init_scale must be >= 0")

    rng = np.random.Generator(np.random.Philox(seed))
    layers = []
    for k, (fan_in, units) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.uniform(-init_scale, init_scale, size=(units, fan_in))
        b_in = output_bias_input if k == len(sizes) - 2 else bias_input
        layers.append(LayerState(w, np.zeros(units), b_in, activations[k]))
    return DeepPredictorState(tuple(layers), step_size, seed, normalized, regularizer)


def deep_forward(state: DeepPredictorState, window: RegressorWindow):
    """Return ``(prediction, cache)`` for the current window."""
    if window.order != state.order:
        raise DomainError(
            f"window has {window.order} taps but the first layer expects {state.order}")
    inputs, pre, post = [], [], []
    h = window.taps
    for layer in state.layers:
        inputs.append(h)
        z = layer.weights @ h + layer.bias_weights * layer.bias_input
        pre.append(z)
        h = activation_apply(layer.activation, z)
        post.append(h)
    return float(h[0]), ForwardCache(tuple(inputs), tuple(pre), tuple(post), window)


def deep_backward(state: DeepPredictorState, cache: ForwardCache, error: float):
    """Gradients of ``error**2 / 2`` with respect to every weight and bias weight.

    ``error`` is ``desired - prediction``, so the output sensitivity is
    ``-error``. Returns a tuple of :class:`LayerGrad`, one per layer.
    """
    if len(cache.pre) != len(state.layers):
        raise DomainError("cache was produced by a different layer stack")
    for layer, z, x in zip(state.layers, cache.pre, cache.inputs):
        if z.shape[0] != layer.units or x.shape[0] != layer.fan_in:
            raise DomainError("cache shapes do not match the layer stack")

    grads = [None] * len(state.layers)
    upstream = np.array([-float(error)])
    for k in range(len(state.layers) - 1, -1, -1):
        layer = state.layers[k]
        delta = upstream * activation_slope(layer.activation, cache.pre[k])
        grads[k] = LayerGrad(np.outer(delta, cache.inputs[k]), delta * layer.bias_input)
        upstream = layer.weights.T @ delta
    return tuple(grads)


def deep_update(state: DeepPredictorState, grads, step_size: Optional[float] = None):
    """Gradient-descent step ``theta <- theta - eta * grad`` on every layer."""
    eta = state.step_size if step_size is None else step_size
    if len(grads) != len(state.layers):
        raise DomainError("gradient structure does not match the layer stack")
    layers = []
    for layer, g in zip(state.layers, grads):
        gw = np.asarray(g.weights, dtype=float)
        gb = np.asarray(g.bias_weights, dtype=float)
        if gw.shape != layer.weights.shape or gb.shape != layer.bias_weights.shape:
            raise DomainError("gradient shapes do not match the layer stack")
        if not (_all_finite(gw) and _all_finite(gb)):
            raise DivergenceError("non-finite gradient", state=state)
        w = layer.weights - eta * gw
        b = layer.bias_weights - eta * gb
        if not (_all_finite(w) and _all_finite(b)):
            raise DivergenceError("update produced non-finite weights", state=state)
        layers.append(_evolve(layer, weights=w, bias_weights=b))
    return _evolve(state, layers=tuple(layers))


def effective_step(state: DeepPredictorState, window: RegressorWindow) -> float:
    if not state.normalized:
        return state.step_size
    x = window.regressor()
    return state.step_size / (float(x @ x) + state.regularizer)


def deep_step(state: DeepPredictorState, window: RegressorWindow,
              desired: float, n: int = 0):
    """Predict, form ``e = d - d_hat``, back-propagate and update."""
    desired = float(desired)
    if not math.isfinite(desired):
        raise DomainError(f"desired must be finite, got {desired!r}")
    predicted, cache = deep_forward(state, window)
    error = desired - predicted
    if not math.isfinite(error):
        raise DivergenceError("non-finite prediction", state=state, step=n)
    grads = deep_backward(state, cache, error)
    try:
        new = deep_update(state, grads, effective_step(state, window))
    except DivergenceError as exc:
        exc.step = n
        raise
    return new, PredictionStep(n, desired, predicted, error)


def squared_error_loss(state: DeepPredictorState, window: RegressorWindow, desired: float) -> float:
    predicted, _ = deep_forward(state, window)
    return 0.5 * (desired - predicted) ** 2


def dead_unit_fraction(state: DeepPredictorState, windows: Sequence[RegressorWindow]) -> float:
    """Fraction of relu units whose pre-activation is never positive over ``windows``."""
    relu_layers = [k for k, layer in enumerate(state.layers)
                   if layer.activation is Activation.RELU]
    total = sum(state.layers[k].units for k in relu_layers)
    if total == 0 or not windows:
        return 0.0
    alive = [np.zeros(state.layers[k].units, dtype=bool) for k in relu_layers]
    for window in windows:
        _, cache = deep_forward(state, window)
        for slot, k in enumerate(relu_layers):
            alive[slot] |= cache.pre[k] > 0.0
    return float(sum((~a).sum() for a in alive)) / total
