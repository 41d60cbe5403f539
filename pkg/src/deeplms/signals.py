"""Seeded synthetic test signals and the Wiener (Yule-Walker) ground truth."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import DomainError, NumericalError

WIENER_RESIDUAL_TOL = 1e-10


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; trials seeded independently stay reproducible in parallel."""
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(seed: int, *stream: int) -> int:
    """Deterministic child seed for trial ``stream`` of a base ``seed``."""
    return int(np.random.SeedSequence([int(seed), *map(int, stream)]).generate_state(1)[0])


def ar_roots(coeffs: Sequence[float]) -> np.ndarray:
    """Roots of ``z^p - a_1 z^(p-1) - ... - a_p``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size == 0:
        return np.zeros(0, dtype=complex)
    return np.roots(np.concatenate(([1.0], -coeffs)))


def is_stable(coeffs: Sequence[float]) -> bool:
    roots = ar_roots(coeffs)
    return bool(np.all(np.abs(roots) < 1.0))


@dataclass(frozen=True)
class ArSpec:
    """``d(n) = sum_k a_k d(n-k) + noise_std * g(n)`` with ``g`` standard Gaussian."""

    coeffs: tuple = ()
    noise_std: float = 1.0
    length: int = 1000
    burn_in: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.noise_std < 0:
            raise DomainError("noise_std must be >= 0")
        if self.length < 0 or self.burn_in < 0:
            raise DomainError("length and burn_in must be >= 0")
        if not is_stable(self.coeffs):
            raise DomainError(
                f"AR coefficients {self.coeffs} are not stable "
                f"(root magnitudes {np.abs(ar_roots(self.coeffs)).round(6).tolist()})")

    @property
    def order(self) -> int:
        return len(self.coeffs)


@dataclass(frozen=True)
class SpikeSpec:
    probability: float = 0.005
    magnitude: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise DomainError(f"spike probability must lie in [0, 1], got {self.probability}")


@dataclass(frozen=True)
class WienerSolution:
    taps: np.ndarray
    mmse: float
    reflection: np.ndarray = field(default_factory=lambda: np.zeros(0))


def gen_ar(spec: ArSpec) -> np.ndarray:
    """Generate ``spec.length`` samples after discarding ``spec.burn_in``, zero initial state."""
    total = spec.length + spec.burn_in
    noise = spec.noise_std * make_rng(spec.seed).standard_normal(total)
    denom = np.concatenate(([1.0], -np.asarray(spec.coeffs, dtype=float)))
    series = lfilter([1.0], denom, noise)
    return series[spec.burn_in:]


def inject_spikes(series, spec: SpikeSpec) -> np.ndarray:
    """Add ``spec.magnitude`` to each sample independently with ``spec.probability``."""
    if not 0.0 <= spec.probability <= 1.0:
        raise DomainError(f"spike probability must lie in [0, 1], got {spec.probability}")
    series = np.asarray(series, dtype=float)
    hits = make_rng(spec.seed).random(series.shape) < spec.probability
    return np.where(hits, series + spec.magnitude, series)


def autocorr(series, max_lag: int) -> np.ndarray:
    """Biased estimate ``r[k] = (1/N) sum_n d(n) d(n-k)`` for ``k = 0..max_lag``."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if max_lag < 0:
        raise DomainError("max_lag must be >= 0")
    if n <= max_lag:
        raise DomainError(f"series of length {n} is too short for lag {max_lag}")
    return np.array([x[k:] @ x[:n - k] for k in range(max_lag + 1)]) / n


def ar_autocorr(coeffs: Sequence[float], noise_std: float, max_lag: int) -> np.ndarray:
    """Exact autocorrelation of a stable AR process.

    Solves the ``p + 1`` linear equations ``r_k - sum_j a_j r_|k-j| = s^2 [k == 0]``
    for ``r_0..r_p`` directly, then extends with the AR recursion.
    """
    a = np.asarray(coeffs, dtype=float)
    p = a.size
    if not is_stable(a):
        raise DomainError(f"AR coefficients {tuple(a)} are not stable")
    var = float(noise_std) ** 2
    m = np.eye(p + 1)
    for k in range(p + 1):
        for j in range(1, p + 1):
            m[k, abs(k - j)] -= a[j - 1]
    rhs = np.zeros(p + 1)
    rhs[0] = var
    r = list(np.linalg.solve(m, rhs))
    for k in range(p + 1, max_lag + 1):
        r.append(sum(a[j - 1] * r[k - j] for j in range(1, p + 1)))
    return np.asarray(r[:max_lag + 1])


def levinson_durbin(r, order: int):
    """Solve the order-``order`` Toeplitz normal equations by the Levinson-Durbin recursion.

    Returns ``(a, err, k)``: predictor taps with ``d(n) ~ sum_i a[i] d(n-1-i)``,
    the prediction error power and the reflection coefficients.
    """
    r = np.asarray(r, dtype=float)
    if order < 1 or r.shape[0] < order + 1:
        raise DomainError(f"need r[0..{order}], got {r.shape[0]} lags")
    if r[0] <= 0:
        raise NumericalError("r[0] must be positive")
    a = np.zeros(order)
    k = np.zeros(order)
    err = r[0]
    for m in range(order):
        acc = r[m + 1] - a[:m] @ r[m:0:-1]
        km = acc / err
        if not abs(km) < 1.0:
            raise NumericalError(
                f"autocorrelation is not positive definite at order {m + 1} "
                f"(reflection coefficient {km:.6g})")
        prev = a[:m].copy()
        a[:m] = prev - km * prev[::-1]
        a[m] = km
        k[m] = km
        err *= 1.0 - km * km
    return a, err, k


def toeplitz_system(r, order: int):
    r = np.asarray(r, dtype=float)
    idx = np.arange(order)
    big_r = r[np.abs(idx[:, None] - idx[None, :])]
    return big_r, r[1:order + 1]


def wiener_taps(r, order: int) -> WienerSolution:
    """Optimal order-``L`` linear one-step predictor for autocorrelation ``r``."""
    taps, _, refl = levinson_durbin(r, order)
    big_r, p = toeplitz_system(r, order)
    residual = np.max(np.abs(big_r @ taps - p))
    if residual > WIENER_RESIDUAL_TOL * max(1.0, abs(float(r[0]))):
        raise NumericalError(
            f"normal equations are ill-conditioned (residual {residual:.3e})")
    mmse = float(r[0] - taps @ p)
    return WienerSolution(taps, max(mmse, 0.0), refl)


def wiener_taps_dense(r, order: int) -> WienerSolution:
    """Same solution via a dense linear solve; used to cross-check Levinson-Durbin."""
    big_r, p = toeplitz_system(r, order)
    taps = np.linalg.solve(big_r, p)
    return WienerSolution(taps, float(r[0] - taps @ p))


def write_series_csv(path, series) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("n,value\n")
        for n, v in enumerate(np.asarray(series, dtype=float)):
            fh.write(f"{n},{float(v)!r}\n")


def read_series_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["n", "value"]:
            raise DomainError(f"{path}: expected header 'n,value', got {header}")
        values = [float(row[1]) for row in reader if row]
    return np.asarray(values)


def process_std(spec: ArSpec) -> float:
    """Stationary standard deviation of the AR process described by ``spec``."""
    return float(np.sqrt(ar_autocorr(spec.coeffs, spec.noise_std, 0)[0]))


def generate(spec: ArSpec, spikes: Optional[SpikeSpec] = None) -> np.ndarray:
    series = gen_ar(spec)
    if spikes is not None:
        series = inject_spikes(series, spikes)
    return series
