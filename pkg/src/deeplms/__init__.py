"""Online adaptive one-step predictors: LMS, NLMS, RLS and a layered nonlinear LMS predictor."""

from .errors import AdaptiveError, ConfigError, DivergenceError, DomainError, NumericalError
from .filters import (
    PredictionStep,
    PredictionTrace,
    RegressorWindow,
    RlsState,
    TapFilterState,
    filter_step,
    lms_update,
    nlms_update,
    predict_linear,
    rls_update,
    run_online,
    window_push,
)
from .deep import (
    Activation,
    DeepPredictorState,
    LayerState,
    activation_apply,
    deep_backward,
    deep_forward,
    deep_init,
    deep_step,
    deep_update,
)
from .signals import ArSpec, SpikeSpec, WienerSolution, ar_autocorr, autocorr, gen_ar, inject_spikes, wiener_taps
from .metrics import ConvergenceReport, LearningCurve, convergence_index, learning_curve, steady_state_mse

__version__ = "0.1.0"
