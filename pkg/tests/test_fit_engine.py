import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sawkit.errors import BootstrapInstabilityError, FitEvaluationError, ValidationError
from sawkit.fit_engine import (
    ConvergenceReason,
    FitProblem,
    bootstrap_uncertainty,
    levenberg_marquardt,
    numerical_jacobian,
)
from sawkit.loss_models import TlsLossParams, freq_shift_temperature, power_sweep_problem, qi_power_model


def _linear(x, y):
    return lambda p: p[0] + p[1] * x - y


def test_linear_matches_lstsq(rng):
    x = np.linspace(0, 1, 50)
    y = 1.5 - 2.0 * x + rng.normal(0, 0.01, x.size)
    res = levenberg_marquardt(FitProblem(_linear(x, y), [0.0, 0.0]))
    A = np.column_stack([np.ones_like(x), x])
    ref, *_ = np.linalg.lstsq(A, y, rcond=None)
    np.testing.assert_allclose(res.params, ref, rtol=1e-8)
    assert res.converged and res.dof == 48
    # covariance is sigma^2 (A^T A)^-1 with sigma^2 = 2 cost / dof
    sigma2 = np.sum((A @ ref - y) ** 2) / 48
    np.testing.assert_allclose(res.covariance, sigma2 * np.linalg.inv(A.T @ A), rtol=1e-5)


def test_exact_linear_in_three_iterations():
    x = np.linspace(0, 1, 10)
    res = levenberg_marquardt(FitProblem(_linear(x, 2.0 * x + 1.0), [0.0, 0.0]))
    np.testing.assert_allclose(res.params, [1.0, 2.0], rtol=1e-12)
    assert res.iterations <= 3


def test_cost_is_half_sum_of_squares(rng):
    x = np.linspace(0, 1, 30)
    y = 0.3 + x + rng.normal(0, 0.1, x.size)
    res = levenberg_marquardt(FitProblem(_linear(x, y), [0.0, 0.0]))
    assert abs(res.cost - 0.5 * np.sum(_linear(x, y)(res.params) ** 2)) <= 1e-12 * max(res.cost, 1.0)
    assert np.allclose(res.covariance, res.covariance.T)
    assert np.all(np.linalg.eigvalsh(res.covariance) >= 0)


def test_lorentzian_dip():
    f = np.linspace(-5, 5, 201)
    truth = np.array([0.8, 0.3, 1.2])

    def model(p):
        return 1.0 - p[0] / (1.0 + ((f - p[1]) / p[2]) ** 2)

    y = model(truth)
    res = levenberg_marquardt(FitProblem(lambda p: model(p) - y, [0.5, 0.0, 2.0]))
    np.testing.assert_allclose(res.params, truth, rtol=1e-8)


def test_covariance_affine_invariance(rng):
    # y = a + b x fitted directly and as y = c + d (2x - 1); (a, b) = (c - d, 2d)
    x = np.linspace(0, 1, 40)
    y = 1.0 + 2.0 * x + rng.normal(0, 0.05, x.size)
    direct = levenberg_marquardt(FitProblem(_linear(x, y), [0.0, 0.0]))
    alt = levenberg_marquardt(FitProblem(lambda p: p[0] + p[1] * (2 * x - 1) - y, [0.0, 0.0]))
    A = np.array([[1.0, -1.0], [0.0, 2.0]])
    np.testing.assert_allclose(A @ alt.params, direct.params, rtol=1e-10)
    np.testing.assert_allclose(A @ alt.covariance @ A.T, direct.covariance, rtol=1e-6)


def test_power_sweep_basin():
    # 3% scatter, every parameter started a factor 3 off; 95 of 100 seeds must converge
    truth = TlsLossParams(Q_TLS=2.23e5, Q_rl=4.74e4, n_c=5.0, beta=1.0, f0=5.6e9)
    n = np.logspace(-1, 6, 20)
    good = 0
    for seed in range(100):
        r = np.random.default_rng(seed)
        qi = qi_power_model(n, 0.01, truth) * (1 + 0.03 * r.standard_normal(n.size))
        start = {k: getattr(truth, k) * 3.0 ** r.choice([-1, 1]) for k in ("Q_TLS", "Q_rl", "n_c", "beta")}
        res = levenberg_marquardt(power_sweep_problem(n, qi, 0.01, truth.f0, start))
        ref = levenberg_marquardt(power_sweep_problem(n, qi, 0.01, truth.f0, truth.to_dict()))
        good += res.converged and res.cost <= ref.cost * (1 + 1e-6)
    assert good >= 95


def test_rosenbrock():
    def r(p):
        return np.array([10.0 * (p[1] - p[0] ** 2), 1.0 - p[0]])

    res = levenberg_marquardt(FitProblem(r, [-1.2, 1.0], max_iterations=500))
    np.testing.assert_allclose(res.params, [1.0, 1.0], atol=1e-8)
    assert res.cost < 1e-20
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_exponential_decay():
    t = np.linspace(0, 5, 40)
    y = 3.0 * np.exp(-0.7 * t)
    res = levenberg_marquardt(FitProblem(lambda p: p[0] * np.exp(-p[1] * t) - y, [1.0, 0.1]))
    np.testing.assert_allclose(res.params, [3.0, 0.7], rtol=1e-9)


def test_bounds_respected():
    # unconstrained minimum at p = -1, bound at 0
    res = levenberg_marquardt(FitProblem(lambda p: np.array([p[0] + 1.0]), [0.5], [0.0], [2.0]))
    assert res.params[0] == 0.0
    assert res.active_bounds[0]
    assert res.convergence_reason is ConvergenceReason.GRADIENT


def test_max_iter_reported():
    def r(p):
        return np.array([10.0 * (p[1] - p[0] ** 2), 1.0 - p[0]])

    res = levenberg_marquardt(FitProblem(r, [-1.2, 1.0], max_iterations=2))
    assert res.convergence_reason is ConvergenceReason.MAX_ITER and not res.converged


def test_nonfinite_trial_rejected():
    # log blows up for p <= 0; the optimizer must back off instead of failing
    y = np.log(np.array([2.0, 2.0]))

    def r(p):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.log(p[0] * np.ones(2)) - y

    res = levenberg_marquardt(FitProblem(r, [50.0], initial_damping=1e-9))
    assert res.params[0] == pytest.approx(2.0, rel=1e-9)


def test_nonfinite_start_raises():
    with pytest.raises(FitEvaluationError) as exc:
        levenberg_marquardt(FitProblem(lambda p: np.array([math.nan]), [1.0]))
    assert exc.value.params is not None


@pytest.mark.parametrize(
    "kw",
    [
        dict(lower_bounds=[1.0], upper_bounds=[1.0]),
        dict(lower_bounds=[2.0], upper_bounds=[3.0]),
        dict(lower_bounds=[0.0, 0.0]),
        dict(max_iterations=0),
        dict(tolerance_step=0.0),
    ],
)
def test_problem_validation(kw):
    with pytest.raises(ValidationError):
        FitProblem(lambda p: p, [1.0], **kw)


def test_rank_deficient_condition():
    # p0 and p1 enter only through their sum
    x = np.linspace(0, 1, 10)
    res = levenberg_marquardt(FitProblem(lambda p: (p[0] + p[1]) * x - x, [0.3, 0.1]))
    assert res.condition_number > 1e6
    assert res.params.sum() == pytest.approx(1.0, rel=1e-8)


def test_numerical_jacobian():
    def f(p):
        return np.array([p[0] ** 2 * p[1], math.sin(p[1])])

    J = numerical_jacobian(f, [1.3, 0.4])
    np.testing.assert_allclose(J, [[2 * 1.3 * 0.4, 1.3**2], [0.0, math.cos(0.4)]], rtol=1e-8, atol=1e-12)


def test_jacobian_simple_cases():
    assert numerical_jacobian(lambda p: p**2, [3.0])[0, 0] == pytest.approx(6.0, abs=1e-8)
    M = np.array([[1.0, -2.0], [0.5, 4.0], [3.0, 0.0]])
    # exact up to cancellation round-off, whatever the step
    for scale in (1e-1, 1e-6):
        np.testing.assert_allclose(numerical_jacobian(lambda p: M @ p, [1.0, 2.0], scale), M, rtol=1e-8, atol=1e-9)


def test_jacobian_of_shift_in_q_tls():
    # the shift is proportional to 1/Q_TLS, so d(shift)/dQ_TLS = -shift/Q_TLS
    T = np.geomspace(0.01, 1.0, 12)

    def shift(p):
        return freq_shift_temperature(T, 5.6e9, p[0])

    J = numerical_jacobian(shift, [2.23e5])
    np.testing.assert_allclose(J[:, 0], -shift([2.23e5]) / 2.23e5, rtol=1e-6)


def test_jacobian_nonfinite_probe():
    with pytest.raises(FitEvaluationError):
        numerical_jacobian(lambda p: np.array([1.0 / (p[0] - 1.0) if p[0] > 1.0 else math.nan]), [1.0 + 1e-9])


def test_analytic_jacobian_used():
    x = np.linspace(0, 1, 20)
    y = 2.0 + 3.0 * x
    calls = []

    def jac(p):
        calls.append(1)
        return np.column_stack([np.ones_like(x), x])

    res = levenberg_marquardt(FitProblem(_linear(x, y), [0.0, 0.0], jacobian_fn=jac))
    assert calls and res.params == pytest.approx([2.0, 3.0])


def test_bootstrap_agrees_with_covariance(rng):
    x = np.linspace(0, 1, 200)
    y = 1.0 + 0.5 * x + rng.normal(0, 0.05, x.size)
    problem = FitProblem(_linear(x, y), [0.0, 0.0])
    best = levenberg_marquardt(problem)
    bs = bootstrap_uncertainty(problem, best, resamples=100, seed=3)
    assert bs.failures == 0 and bs.samples.shape == (100, 2)
    np.testing.assert_allclose(bs.disagreement, 1.0, atol=0.3)
    again = bootstrap_uncertainty(problem, best, resamples=100, seed=3)
    np.testing.assert_array_equal(bs.samples, again.samples)


def test_bootstrap_linear_matches_ols_at_50_points(rng):
    x = np.linspace(0, 1, 50)
    y = 1.0 + 0.5 * x + rng.normal(0, 0.05, x.size)
    problem = FitProblem(_linear(x, y), [0.0, 0.0])
    bs = bootstrap_uncertainty(problem, levenberg_marquardt(problem), resamples=400, seed=1)
    np.testing.assert_allclose(bs.disagreement, 1.0, atol=0.15)


def test_bootstrap_noiseless_is_zero():
    x = np.linspace(0, 1, 30)
    problem = FitProblem(_linear(x, 1.0 + 0.5 * x), [0.0, 0.0])
    bs = bootstrap_uncertainty(problem, levenberg_marquardt(problem), resamples=50, seed=0)
    assert np.all(bs.std_errors < 1e-8)


def test_bootstrap_validation():
    x = np.linspace(0, 1, 10)
    problem = FitProblem(_linear(x, x), [0.0, 0.0])
    best = levenberg_marquardt(problem)
    with pytest.raises(ValidationError):
        bootstrap_uncertainty(problem, best, resamples=10)


def test_bootstrap_instability():
    # residual function that fails on every perturbed refit
    x = np.linspace(0, 1, 20)
    y = np.sin(7 * x)
    state = {"armed": False}

    def r(p):
        if state["armed"] and abs(p[0] - base[0]) > 0:
            return np.full(x.size, np.nan)
        return p[0] * x - y

    problem = FitProblem(r, [0.1])
    base = levenberg_marquardt(problem).params.copy()
    best = levenberg_marquardt(problem)
    state["armed"] = True
    with pytest.raises(BootstrapInstabilityError):
        bootstrap_uncertainty(problem, best, resamples=50)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 3), st.floats(-2, 2))
def test_quadratic_recovery(a, b, c):
    x = np.linspace(-1, 1, 15)
    y = a + b * x + c * x**2
    res = levenberg_marquardt(FitProblem(lambda p: p[0] + p[1] * x + p[2] * x**2 - y, [0.0, 1.0, 0.0]))
    np.testing.assert_allclose(res.params, [a, b, c], atol=1e-8)
