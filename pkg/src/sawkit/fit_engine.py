"""Numerical machinery shared by every fit.

* :func:`levenberg_marquardt` -- bounded LM with Nielsen damping updates and
  a covariance estimate.
* :func:`digamma_complex` -- complex digamma via recurrence and the
  asymptotic series.
* :func:`numerical_jacobian` -- central differences.
* :func:`bootstrap_uncertainty` -- residual-resampling standard errors.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BootstrapInstabilityError,
    FitEvaluationError,
    NumericalError,
    PoleError,
    ValidationError,
)

__all__ = [
    "ConvergenceReason",
    "FitProblem",
    "FitResult",
    "BootstrapResult",
    "levenberg_marquardt",
    "numerical_jacobian",
    "bootstrap_uncertainty",
    "digamma_complex",
    "digamma",
]

ResidualFn = Callable[[np.ndarray], np.ndarray]


class ConvergenceReason(str, enum.Enum):
    GRADIENT = "gradient"
    STEP = "step"
    COST = "cost"
    MAX_ITER = "max_iter"


@dataclass
class FitProblem:
    residual_fn: ResidualFn
    initial_params: Sequence[float]
    lower_bounds: Sequence[float] | None = None
    upper_bounds: Sequence[float] | None = None
    max_iterations: int = 200
    tolerance_gradient: float = 1e-10
    tolerance_step: float = 1e-10
    tolerance_cost: float = 1e-12
    jacobian_fn: ResidualFn | None = None
    jacobian_scale: float = 1e-6
    initial_damping: float = 1e-6
    param_names: Sequence[str] | None = None

    def __post_init__(self):
        x0 = np.asarray(self.initial_params, dtype=float).ravel()
        n = x0.size
        lo = np.full(n, -np.inf) if self.lower_bounds is None else np.asarray(self.lower_bounds, float)
        hi = np.full(n, np.inf) if self.upper_bounds is None else np.asarray(self.upper_bounds, float)
        if lo.shape != (n,) or hi.shape != (n,):
            raise ValidationError("bounds must match the parameter vector length")
        if np.any(lo >= hi):
            raise ValidationError("lower bounds must be strictly below upper bounds")
        if np.any(x0 < lo) or np.any(x0 > hi):
            raise ValidationError(f"initial parameters {x0} violate the bounds")
        for name in ("tolerance_gradient", "tolerance_step", "tolerance_cost"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1")
        self.initial_params = x0
        self.lower_bounds = lo
        self.upper_bounds = hi

    def with_residual(self, residual_fn: ResidualFn, initial=None) -> "FitProblem":
        return FitProblem(
            residual_fn,
            self.initial_params if initial is None else initial,
            self.lower_bounds,
            self.upper_bounds,
            self.max_iterations,
            self.tolerance_gradient,
            self.tolerance_step,
            self.tolerance_cost,
            None,
            self.jacobian_scale,
            self.initial_damping,
            self.param_names,
        )


@dataclass
class FitResult:
    params: np.ndarray
    covariance: np.ndarray
    cost: float
    iterations: int
    convergence_reason: ConvergenceReason
    condition_number: float
    residuals: np.ndarray = field(repr=False)
    jacobian: np.ndarray = field(repr=False)
    history: list[float] = field(default_factory=list, repr=False)
    active_bounds: np.ndarray = field(default=None, repr=False)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def converged(self) -> bool:
        return self.convergence_reason is not ConvergenceReason.MAX_ITER

    @property
    def dof(self) -> int:
        return self.residuals.size - self.params.size


def _evaluate(fn: ResidualFn, x: np.ndarray) -> np.ndarray:
    r = np.asarray(fn(x), dtype=float).ravel()
    if not np.all(np.isfinite(r)):
        raise FitEvaluationError(f"residual function returned non-finite values at params={x!r}", params=x.copy())
    return r


def numerical_jacobian(residual_fn: ResidualFn, params, scale: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, step ``scale * max(|p_j|, 1)`` per parameter."""
    x = np.asarray(params, dtype=float).ravel()
    steps = scale * np.maximum(np.abs(x), 1.0)
    columns = []
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += steps[j]
        xm[j] -= steps[j]
        rp = _evaluate(residual_fn, xp)
        rm = _evaluate(residual_fn, xm)
        # actual representable step, not the nominal one
        columns.append((rp - rm) / (xp[j] - xm[j]))
    return np.column_stack(columns) if columns else np.zeros((0, 0))


def _jacobian(problem: FitProblem, x: np.ndarray) -> np.ndarray:
    if problem.jacobian_fn is not None:
        J = np.asarray(problem.jacobian_fn(x), dtype=float)
        if not np.all(np.isfinite(J)):
            raise FitEvaluationError(f"jacobian returned non-finite values at params={x!r}", params=x.copy())
        return J
    return numerical_jacobian(problem.residual_fn, x, problem.jacobian_scale)


def _covariance(J: np.ndarray, cost: float) -> tuple[np.ndarray, float]:
    m, n = J.shape
    A = J.T @ J
    sv = np.linalg.svd(J, compute_uv=False) if n else np.array([1.0])
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    sigma2 = 2.0 * cost / max(m - n, 1)
    cov = sigma2 * np.linalg.pinv(A, hermitian=True)
    return 0.5 * (cov + cov.T), cond


def levenberg_marquardt(problem: FitProblem) -> FitResult:
    """Minimise ``0.5 * sum(r(p)**2)`` subject to box bounds.

    Damping follows Nielsen: on acceptance ``mu *= max(1/3, 1 - (2 rho - 1)**3)``,
    on rejection ``mu *= nu; nu *= 2``.  The damping matrix is the running
    maximum of ``diag(J^T J)`` so badly scaled parameters are handled.
    Parameters pinned at a bound with the gradient pushing outward are
    frozen for that step; trial points are projected onto the box.
    A trial point where the residual is non-finite counts as a rejected step.
    """
    x = problem.initial_params.copy()
    lo, hi = problem.lower_bounds, problem.upper_bounds
    r = _evaluate(problem.residual_fn, x)
    cost = 0.5 * float(r @ r)
    history = [cost]
    J = _jacobian(problem, x)
    A = J.T @ J
    g = J.T @ r
    D = np.maximum(np.diag(A).copy(), 1e-300)
    mu = problem.initial_damping
    nu = 2.0
    reason = ConvergenceReason.MAX_ITER
    it = 0
    n = x.size
    active = np.zeros(n, dtype=bool)

    def free_mask(x, g):
        at_lo = (x <= lo) & (g > 0)
        at_hi = (x >= hi) & (g < 0)
        return ~(at_lo | at_hi)

    while it < problem.max_iterations:
        it += 1
        free = free_mask(x, g)
        active = ~free
        rnorm = math.sqrt(2.0 * cost)
        if not np.any(free) or (
            rnorm > 0
            and np.max(np.abs(g[free]) / (np.sqrt(D[free]) * rnorm)) <= problem.tolerance_gradient
        ):
            reason = ConvergenceReason.GRADIENT
            break
        if cost == 0.0:
            reason = ConvergenceReason.COST
            break
        Af = A[np.ix_(free, free)]
        gf = g[free]
        Df = D[free]
        accepted = False
        while not accepted:
            try:
                hf = np.linalg.solve(Af + mu * np.diag(Df), -gf)
            except np.linalg.LinAlgError:
                mu *= nu
                nu *= 2.0
                if mu > 1e300:
                    break
                continue
            h = np.zeros(n)
            h[free] = hf
            x_new = np.clip(x + h, lo, hi)
            h = x_new - x
            small_step = float(np.linalg.norm(h)) <= problem.tolerance_step * (
                float(np.linalg.norm(x)) + problem.tolerance_step
            )
            try:
                r_new = _evaluate(problem.residual_fn, x_new)
                cost_new = 0.5 * float(r_new @ r_new)
            except FitEvaluationError:
                r_new, cost_new = None, math.inf
            predicted = -(float(g @ h) + 0.5 * float(h @ (A @ h)))
            actual = cost - cost_new
            rho = actual / predicted if predicted > 0 else -1.0
            if rho > 0 and math.isfinite(cost_new):
                accepted = True
                rel_drop = actual / cost if cost > 0 else 0.0
                x, r, cost = x_new, r_new, cost_new
                history.append(cost)
                J = _jacobian(problem, x)
                A = J.T @ J
                g = J.T @ r
                D = np.maximum(D, np.diag(A))
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                if small_step:
                    reason = ConvergenceReason.STEP
                elif rel_drop <= problem.tolerance_cost:
                    reason = ConvergenceReason.COST
            elif small_step:
                reason = ConvergenceReason.STEP
                break
            else:
                mu *= nu
                nu *= 2.0
                if mu > 1e300:
                    break
        if reason is not ConvergenceReason.MAX_ITER:
            break
        if not accepted:
            # damping blew up without progress: we are at a numerical minimum
            reason = ConvergenceReason.STEP
            break

    r = _evaluate(problem.residual_fn, x)
    cost = 0.5 * float(r @ r)
    cov, cond = _covariance(J, cost)
    return FitResult(
        params=x,
        covariance=cov,
        cost=cost,
        iterations=it,
        convergence_reason=reason,
        condition_number=cond,
        residuals=r,
        jacobian=J,
        history=history,
        active_bounds=active,
    )


@dataclass
class BootstrapResult:
    std_errors: np.ndarray
    covariance_errors: np.ndarray
    disagreement: np.ndarray
    failures: int
    resamples: int
    samples: np.ndarray = field(repr=False)


def bootstrap_uncertainty(problem: FitProblem, best: FitResult, resamples: int = 200, seed: int = 0) -> BootstrapResult:
    """Residual-bootstrap standard errors.

    Each replicate replaces the fitted residuals with a resample (with
    replacement) of themselves, i.e. solves ``r(p) - r_hat + r_hat[idx]``,
    starting from the best-fit parameters.  ``disagreement`` is the ratio of
    bootstrap to covariance standard errors.
    """
    if resamples < 50:
        raise ValidationError(f"resamples={resamples} is below the minimum of 50")
    if not best.converged:
        raise ValidationError("bootstrap needs a converged best fit")
    rng = np.random.Generator(np.random.PCG64(seed))
    r_hat = np.asarray(best.residuals, float)
    m = r_hat.size
    samples = []
    failures = 0
    for _ in range(resamples):
        idx = rng.integers(0, m, size=m)
        shift = r_hat[idx] - r_hat

        def fn(p, _shift=shift):
            return np.asarray(problem.residual_fn(p), float).ravel() + _shift

        try:
            res = levenberg_marquardt(problem.with_residual(fn, initial=best.params))
        except NumericalError:
            failures += 1
            continue
        if not res.converged:
            failures += 1
            continue
        samples.append(res.params)
    if failures > 0.2 * resamples:
        raise BootstrapInstabilityError(f"{failures} of {resamples} bootstrap refits failed")
    samples = np.array(samples)
    se = samples.std(axis=0, ddof=1)
    cov_se = best.std_errors
    with np.errstate(divide="ignore", invalid="ignore"):
        disagreement = np.where(cov_se > 0, se / cov_se, np.nan)
    return BootstrapResult(se, cov_se, disagreement, failures, resamples, samples)


# --- complex digamma ------------------------------------------------------

# B_{2k} / (2k) for k = 1..10
_ASYMPTOTIC = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
    43867.0 / 14364.0,
    -174611.0 / 6600.0,
)
_SHIFT_RADIUS = 10.0


def _digamma_upper(z: complex) -> complex:
    """Digamma for Re z >= 0.5 and Im z >= 0."""
    acc = 0.0 + 0.0j
    while abs(z) < _SHIFT_RADIUS:
        acc -= 1.0 / z
        z += 1.0
    w = 1.0 / (z * z)
    series = 0.0
    for c in reversed(_ASYMPTOTIC):
        series = series * w + c
    return acc + np.log(z) - 0.5 / z - series * w


def digamma_complex(z: complex) -> complex:
    """Psi(z) for complex ``z``; poles at 0, -1, -2, ... raise :class:`PoleError`.

    Shifts up by recurrence until ``|z| >= 10``, then sums the asymptotic
    series through the B_20 term.  ``Re z < 1/2`` goes through the
    reflection formula, and the lower half plane through conjugate symmetry.
    """
    z = complex(z)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ValidationError(f"digamma argument must be finite, got {z!r}")
    if z.imag == 0.0 and z.real <= 0.0 and z.real == math.floor(z.real):
        raise PoleError(f"digamma has a pole at {z.real:g}")
    if z.imag < 0.0:
        return digamma_complex(z.conjugate()).conjugate()
    if z.real < 0.5:
        # psi(z) = psi(1 - z) - pi cot(pi z); cot written via q = exp(2 i pi z), |q| <= 1 here
        q = np.exp(2j * math.pi * z)
        cot = 1j * (q + 1.0) / (q - 1.0)
        return digamma_complex(1.0 - z) - math.pi * cot
    return complex(_digamma_upper(z))


def digamma(z):
    """Vectorised wrapper over :func:`digamma_complex` (Re z >= 1/2 takes a fast path)."""
    arr = np.asarray(z, dtype=complex)
    flat = arr.ravel()
    out = np.empty_like(flat)
    fast = flat.real >= 0.5
    if np.any(~fast):
        out[~fast] = [digamma_complex(v) for v in flat[~fast]]
    if np.any(fast):
        zf = flat[fast].copy()
        flip = zf.imag < 0
        zf[flip] = zf[flip].conj()
        acc = np.zeros_like(zf)
        for _ in range(int(_SHIFT_RADIUS) + 1):
            small = np.abs(zf) < _SHIFT_RADIUS
            if not np.any(small):
                break
            acc[small] -= 1.0 / zf[small]
            zf[small] += 1.0
        w = 1.0 / (zf * zf)
        series = np.zeros_like(zf)
        for c in reversed(_ASYMPTOTIC):
            series = series * w + c
        val = acc + np.log(zf) - 0.5 / zf - series * w
        val[flip] = val[flip].conj()
        out[fast] = val
    out = out.reshape(arr.shape)
    return complex(out) if out.ndim == 0 else out
