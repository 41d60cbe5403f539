"""One test per acceptance criterion; each prints a PASS/FAIL line with the measured numbers."""
import dataclasses
from pathlib import Path

import numpy as np
import pytest

from deeplms.cli import main
from deeplms.deep import deep_backward, deep_forward, deep_init, deep_step, squared_error_loss
from deeplms.filters import (
    RegressorWindow,
    TapFilterState,
    lms_update,
    nlms_update,
    predict_linear,
    run_online,
)
from deeplms.harness import ExperimentConfig, FilterConfig, MetricsConfig, run_experiment
from deeplms.signals import ArSpec, ar_autocorr, gen_ar, wiener_taps, wiener_taps_dense

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
AR2 = (0.5, -0.3)


def test_c1_lms_update_exact(criterion):
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        order = int(rng.integers(1, 17))
        state = TapFilterState(rng.normal(size=order), rng.normal(), rng.uniform(1e-4, 1.0))
        window = RegressorWindow(rng.normal(size=order), rng.choice([1.0, -1.0, 0.5]))
        err = rng.normal() * 10 ** rng.uniform(-3, 2)
        new = lms_update(state, window, err)
        delta = new.parameters() - state.parameters()
        expected = state.step_size * err * window.regressor()
        # one ulp of the stored weight is the resolution of the increment itself
        scale = np.maximum.reduce([np.abs(state.parameters()), np.abs(new.parameters()),
                                   np.abs(expected)])
        worst = max(worst, float(np.max(np.abs(delta - expected) / np.spacing(scale))))
    passed = worst <= 4.0
    criterion(1, passed, f"LMS increment vs mu*e*x over 1000 triples: worst {worst:.2f} ulp (<= 4)")
    assert passed


def test_c2_nlms_projection(criterion):
    rng = np.random.default_rng(202)
    worst, strict = 0.0, True
    for lam in (0.5, 1.0, 1.5, 2.0):
        for _ in range(250):
            order = int(rng.integers(1, 9))
            state = TapFilterState(rng.normal(size=order), rng.normal(), lam, 0.0, "nlms")
            window = RegressorWindow(rng.normal(size=order), 1.0)
            d = rng.normal()
            prior = d - predict_linear(state, window)
            post = d - predict_linear(nlms_update(state, window, prior), window)
            worst = max(worst, abs(post - (1.0 - lam) * prior))
            if lam < 2.0 and not abs(post) < abs(prior):
                strict = False
    passed = worst <= 1e-12 and strict
    criterion(2, passed, f"NLMS a-posteriori = (1-lambda) a-priori: max deviation {worst:.2e} "
                         f"(<= 1e-12); strict reduction for lambda < 2: {strict}")
    assert passed


@pytest.fixture(scope="module")
def ar2_ensemble():
    config = ExperimentConfig(
        ArSpec(AR2, 1.0, 20000, 500, 1),
        (FilterConfig("nlms", "nlms", 2, 0.5, regularizer=1e-8),
         FilterConfig("lms", "lms", 2),
         FilterConfig("rls", "rls", 2, forgetting=1.0)),
        metrics=MetricsConfig(ensemble_size=20))
    return run_experiment(config, write=False)


def test_c3_wiener_convergence(ar2_ensemble, criterion):
    r = ar2_ensemble.result("nlms")
    dist = float(np.linalg.norm(r.mean_params[:2] - r.oracle.taps))
    excess = r.convergence.excess_mse / r.oracle.mmse
    passed = dist <= 0.05 and excess <= 0.10
    criterion(3, passed, f"NLMS lambda=0.5 L=2: mean taps {np.round(r.mean_params[:2], 4).tolist()} "
                         f"vs Wiener {np.round(r.oracle.taps, 4).tolist()}, L2 distance {dist:.4f} "
                         f"(<= 0.05); excess MSE {100 * excess:.1f}% of mmse (<= 10%)")
    assert passed


def test_c4_rls_faster_than_lms(ar2_ensemble, criterion):
    wins = ar2_ensemble.paired_wins("rls", "lms")
    rls = ar2_ensemble.result("rls").trial_indices
    lms = ar2_ensemble.result("lms").trial_indices
    passed = wins >= 18
    criterion(4, passed, f"RLS converged strictly before LMS (mu=0.01) in {wins}/20 paired trials "
                         f"(>= 18); RLS {list(rls)} LMS {list(lms)}")
    assert passed


def _fd_grads(state, window, desired, h=1e-6):
    out = []
    for k, layer in enumerate(state.layers):
        pair = []
        for which in ("weights", "bias_weights"):
            base = getattr(layer, which)
            g = np.zeros_like(base)
            for index in np.ndindex(base.shape):
                vals = []
                for v in (base[index] + h, base[index] - h):
                    arr = np.array(base)
                    arr[index] = v
                    layers = list(state.layers)
                    layers[k] = dataclasses.replace(layer, **{which: arr})
                    vals.append(squared_error_loss(
                        dataclasses.replace(state, layers=tuple(layers)), window, desired))
                g[index] = (vals[0] - vals[1]) / (2 * h)
            pair.append(g)
        out.append(pair)
    return out


def test_c5_gradient_check(criterion):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        state = deep_init([8, 4, 1], seed=seed, init_scale=1.0)
        layers = tuple(dataclasses.replace(l, bias_weights=rng.uniform(-0.5, 0.5, l.units))
                       for l in state.layers)
        state = dataclasses.replace(state, layers=layers)
        window = RegressorWindow(rng.normal(size=8))
        desired = rng.normal()
        _, cache = deep_forward(state, window)
        analytic = deep_backward(state, cache, desired - deep_forward(state, window)[0])
        numeric = _fd_grads(state, window, desired)
        for g, (nw, nb) in zip(analytic, numeric):
            for a, n in ((g.weights, nw), (g.bias_weights, nb)):
                denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
                worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    passed = worst <= 1e-5
    criterion(5, passed, f"[8,4,1] relu backprop vs central differences, 100 instances: "
                         f"max relative error {worst:.2e} (<= 1e-5)")
    assert passed


def test_c6_linear_degeneration(criterion):
    series = gen_ar(ArSpec((0.9,), 1.0, 5000, 500, 6))
    mu = 0.005
    deep = deep_init([4, 1], ["identity"], init_scale=0.0, step_size=mu)
    deep_final, dt = run_online(deep, series, deep_step)
    lin_final, lt = run_online(TapFilterState.zeros(4, mu), series)
    diff = max(float(np.max(np.abs(dt.predicted - lt.predicted))),
               float(np.max(np.abs(dt.error - lt.error))),
               float(np.max(np.abs(deep_final.layers[0].weights[0] - lin_final.weights))))
    passed = diff <= 1e-12
    criterion(6, passed, f"identity single-layer predictor vs LMS on 5000 AR(1) samples: "
                         f"max difference {diff:.2e} (<= 1e-12)")
    assert passed


def test_c7_oracle_self_consistency(criterion):
    processes = [(0.9,), AR2, (1.5, -0.7), (0.2, 0.1, -0.3, 0.25), (-0.5, 0.3, 0.1)]
    recover, agree = 0.0, 0.0
    for coeffs in processes:
        p = len(coeffs)
        r = ar_autocorr(coeffs, 1.0, 10)
        sol = wiener_taps(r, p)
        recover = max(recover, float(np.max(np.abs(sol.taps - coeffs))))
        for order in range(1, 11):
            agree = max(agree, float(np.max(np.abs(
                wiener_taps(r, order).taps - wiener_taps_dense(r, order).taps))))
    passed = recover <= 1e-9 and agree <= 1e-10
    criterion(7, passed, f"AR coefficient recovery error {recover:.2e} (<= 1e-9); "
                         f"Levinson-Durbin vs dense solve {agree:.2e} (<= 1e-10)")
    assert passed


def test_c8_compare_deterministic(tmp_path, criterion):
    path = tmp_path / "det.ini"
    path.write_text((CONFIGS / "ar2_compare.ini").read_text()
                    .replace("length = 5000", "length = 1500")
                    .replace("ensemble_size = 10", "ensemble_size = 3"))
    for d in ("a", "b"):
        assert main(["compare", "--config", str(path), "--out", str(tmp_path / d)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    csvs = [f for f in files if f.suffix == ".csv"]
    passed = len(csvs) == 4 and all(same)
    criterion(8, passed, f"two compare runs: {sum(same)}/{len(files)} artifacts byte-identical "
                         f"({len(csvs)} curve CSVs)")
    assert passed


def test_c9_spike_experiment(tmp_path, criterion):
    rc = main(["compare", "--config", str(CONFIGS / "spikes.ini"), "--out", str(tmp_path)])
    report = (tmp_path / "report.txt").read_text()
    line = next((l.strip() for l in report.splitlines()
                 if "deep / nlms steady-state MSE ratio" in l), None)
    passed = rc == 0 and line is not None and "DIVERGED" not in report
    criterion(9, passed, f"spike-contaminated AR(2), p=0.005, 10 sigma: exit {rc}, "
                         f"'{line}', no divergence: {'DIVERGED' not in report}")
    assert passed
