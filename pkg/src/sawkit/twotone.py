"""Detuned-pump (two-tone) TLS saturation.

A strong pump at ``f_pump`` saturates TLS within a Lorentzian band of
half-width ``1/(2 pi T2)`` around it.  A weak probe mode at ``f_probe``
sees

* less loss: the TLS term of the loss model is saturated by the pump
  saturation parameter :func:`pump_saturation` evaluated at the detuning;
* a dispersive shift: the Hilbert transform of the saturation hole burnt
  into a uniform TLS density.  Saturated TLS above the probe no longer pull
  it down, so the shift has the sign of ``f_pump - f_probe``.

Kernel, in units ``x = (nu - f_pump) * 2 pi T2`` with ``s0 = n_pump / nc_eff``::

    h(x)   = 1 - (1 + s0 / (1 + x**2))**-0.5
    df/f0  = A * tanh(h f0 / 2 k_B T) / (pi Q_TLS) * PV int h(x) / (x - x_s) dx / (2 pi)

over ``|x| <= 50 sqrt(1 + s0)`` (fifty saturation widths), where ``x_s`` is
the probe position.  The overall constant ``A`` is a fit parameter.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    DegeneracyWarning,
    IdentifiabilityError,
    NumericalError,
    OptimizerError,
    QuadratureError,
    ValidationError,
)
from .fit_engine import FitProblem, levenberg_marquardt
from .loss_models import TlsLossParams, thermal_factor

__all__ = [
    "DEFAULT_T1_RATIO",
    "BAND_WIDTHS",
    "ProbeScan",
    "ProbeCurve",
    "TwoToneResult",
    "pump_saturation",
    "nc_effective",
    "hole_integral",
    "twotone_forward",
    "fit_twotone",
]

DEFAULT_T1_RATIO = 0.5
BAND_WIDTHS = 50.0
QUAD_NODES = 96
QUAD_RTOL = 1e-9
# profile check on T2: refit with T2 scaled by this factor either way
PROFILE_FACTOR = 4.0
PROFILE_DCHI2 = 4.0


def _two_pi_rabi_sq(omega0):
    return (2.0 * np.pi * np.asarray(omega0, float)) ** 2


def pump_saturation(n_pump, detuning, omega0, t2, t1):
    """``n (2 pi Omega0)**2 T1 T2 / (1 + (2 pi detuning T2)**2)``."""
    n_pump = np.asarray(n_pump, float)
    if np.any(n_pump < 0) or not np.all(np.isfinite(n_pump)):
        raise ValidationError("pump phonon numbers must be finite and non-negative")
    for name, v in (("omega0", omega0), ("t2", t2), ("t1", t1)):
        if not np.all(np.asarray(v, float) > 0):
            raise ValidationError(f"{name} must be positive")
    s = n_pump * _two_pi_rabi_sq(omega0) * t1 * t2 / (1.0 + (2.0 * np.pi * np.asarray(detuning, float) * t2) ** 2)
    return float(s) if np.ndim(s) == 0 else s


def nc_effective(omega0, t2, t1):
    """Pump phonon number that gives ``S = 1`` on resonance."""
    return 1.0 / (_two_pi_rabi_sq(omega0) * t1 * t2)


# --- principal-value quadrature -------------------------------------------

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _hole(x, s0):
    """``1 - (1 + s0/(1+x^2))**-1/2`` without cancellation at small ``s0``."""
    u = s0 / (1.0 + x * x)
    root = np.sqrt(1.0 + u)
    return u / (root * (1.0 + root))


def _pv_rule(s0, c, nodes):
    s0 = s0[:, None]
    c = c[:, None]
    band = BAND_WIDTHS * np.sqrt(1.0 + s0)
    t_max = np.arcsinh(band)
    t, wt = _gauss_legendre(nodes)
    # x = sinh(t) puts the singularities of h (x = +-i and +-i sqrt(1+s0))
    # at distance pi/2 from the real t axis whatever s0 is
    x = np.sinh(t_max * t[None, :])
    dx = t_max * np.cosh(t_max * t[None, :])
    hc = _hole(c, s0)
    diff = x - c
    # the subtracted integrand is regular; use its limit where x hits c exactly
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(diff != 0.0, (_hole(x, s0) - hc) / diff, 0.0)
    smooth = np.sum(g * dx * wt[None, :], axis=1)
    log_term = hc[:, 0] * np.log(np.abs((band[:, 0] - c[:, 0]) / (band[:, 0] + c[:, 0])))
    return smooth + log_term


def hole_integral(s0, x_s, *, nodes: int = QUAD_NODES, rtol: float = QUAD_RTOL, check: bool = True):
    """``PV int_{-B}^{B} h(x) / (x - x_s) dx`` with ``B = 50 sqrt(1 + s0)``.

    The pole is removed by subtracting ``h(x_s)``, whose integral is known in
    closed form; the regular remainder goes through a Gauss-Legendre rule
    on a sinh-mapped variable.  The difference between ``nodes`` and
    ``2 * nodes`` is the error estimate; above ``rtol`` relative to
    ``max|I|, int h`` a :class:`QuadratureError` is raised.  ``check=False``
    skips the doubled rule (fits use it inside the iteration and verify the
    bound once at the solution).
    """
    scalar = np.ndim(s0) == 0 and np.ndim(x_s) == 0
    s0 = np.atleast_1d(np.asarray(s0, float))
    x_s = np.atleast_1d(np.asarray(x_s, float))
    s0, x_s = np.broadcast_arrays(s0, x_s)
    shape = s0.shape
    s0 = s0.ravel()
    x_s = x_s.ravel()
    if np.any(s0 < 0) or not np.all(np.isfinite(s0)) or not np.all(np.isfinite(x_s)):
        raise ValidationError("saturation must be finite and non-negative and the probe position finite")
    if np.any(np.abs(x_s) == BAND_WIDTHS * np.sqrt(1.0 + s0)):
        raise ValidationError("the probe sits exactly on the band edge")
    if not check:
        out = _pv_rule(s0, x_s, nodes)
        return float(out[0]) if scalar else out.reshape(shape)
    coarse = _pv_rule(s0, x_s, nodes)
    fine = _pv_rule(s0, x_s, 2 * nodes)
    # scale of the integral: the hole area, roughly pi s0 / 2 (weak) to 2 sqrt(s0) (strong)
    scale = np.maximum(np.abs(fine), 0.5 * np.pi * s0 / np.sqrt(1.0 + s0) / (1.0 + np.abs(x_s)))
    err = np.abs(fine - coarse)
    bad = err > rtol * np.where(scale > 0, scale, 1.0)
    bad &= s0 > 0
    if np.any(bad):
        worst = float(np.max(err[bad] / scale[bad]))
        raise QuadratureError(
            f"principal-value integral did not converge: relative error estimate {worst:.3g} > {rtol:g}",
            error_bound=worst,
        )
    return float(fine[0]) if scalar else fine.reshape(shape)


# --- forward model --------------------------------------------------------


def _forward(n_pump, detuning, f_probe, p: TlsLossParams, omega0, t2, t1, T, amplitude, check=True):
    """Vectorised core; ``detuning = f_probe - f_pump``."""
    s_probe = pump_saturation(n_pump, detuning, omega0, t2, t1)
    th = thermal_factor(f_probe, T)
    inv_qi = th / (p.Q_TLS * np.sqrt(1.0 + np.asarray(s_probe) ** p.beta)) + 1.0 / p.Q_rl
    s0 = np.asarray(n_pump, float) / nc_effective(omega0, t2, t1)
    x_s = 2.0 * np.pi * t2 * np.asarray(detuning, float)
    integral = hole_integral(s0, x_s, check=check)
    shift = f_probe * amplitude * th / (math.pi * p.Q_TLS) * np.asarray(integral) / (2.0 * math.pi)
    return 1.0 / inv_qi, shift


def twotone_forward(
    n_pump,
    f_pump: float,
    f_probe: float,
    p: TlsLossParams,
    omega0: float,
    t2: float,
    t1: float | None = None,
    *,
    temperature: float | None = None,
    amplitude: float = 1.0,
):
    """Probe ``(Q_i, delta_f [Hz])`` under a detuned pump of ``n_pump`` phonons.

    ``t1`` defaults to ``DEFAULT_T1_RATIO * t2`` and ``temperature`` to the
    parameter set's ``T_ref``.  Broadcasts over ``n_pump``.
    """
    if f_probe == f_pump:
        raise ValidationError("probe and pump frequencies must differ")
    if not (f_pump > 0 and f_probe > 0):
        raise ValidationError("frequencies must be positive")
    t1 = DEFAULT_T1_RATIO * t2 if t1 is None else t1
    T = p.T_ref if temperature is None else temperature
    qi, df = _forward(n_pump, f_probe - f_pump, f_probe, p, omega0, t2, t1, T, amplitude)
    if np.ndim(n_pump) == 0:
        return float(np.ravel(qi)[0]), float(np.ravel(df)[0])
    return qi, df


# --- fitting ---------------------------------------------------------------


@dataclass(frozen=True)
class ProbeScan:
    """Measured probe response versus pump phonon number.

    ``Q_i_sigma`` and ``shift_sigma`` are optional one-sigma errors.  When
    given they replace the default relative weighting.
    """

    f_probe: float
    n_pump: np.ndarray
    Q_i: np.ndarray
    shift: np.ndarray
    Q_i_sigma: np.ndarray | None = None
    shift_sigma: np.ndarray | None = None

    def __post_init__(self):
        cols = [np.asarray(c, float).ravel() for c in (self.n_pump, self.Q_i, self.shift)]
        if len({c.size for c in cols}) != 1:
            raise ValidationError("n_pump, Q_i and shift must have equal length")
        for name in ("Q_i_sigma", "shift_sigma"):
            sig = getattr(self, name)
            if sig is None:
                continue
            sig = np.asarray(sig, float).ravel()
            if sig.size != cols[0].size or not np.all(np.isfinite(sig)) or np.any(sig <= 0):
                raise ValidationError(f"{name} must be positive and match n_pump in length")
            object.__setattr__(self, name, sig)
        if cols[0].size < 3:
            raise ValidationError("a probe scan needs at least 3 pump powers")
        if not all(np.all(np.isfinite(c)) for c in cols):
            raise ValidationError("probe scan contains non-finite values")
        if np.any(cols[0] < 0) or np.any(cols[1] <= 0):
            raise ValidationError("pump phonon numbers must be non-negative and Q_i positive")
        for name, c in zip(("n_pump", "Q_i", "shift"), cols):
            object.__setattr__(self, name, c)


@dataclass(frozen=True)
class ProbeCurve:
    f_probe: float
    detuning: float
    n_pump: np.ndarray
    shift_curve: np.ndarray
    qi_curve: np.ndarray
    residual_rms: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "f_probe": self.f_probe,
            "detuning": self.detuning,
            "n_pump": self.n_pump.tolist(),
            "shift_curve": self.shift_curve.tolist(),
            "qi_curve": self.qi_curve.tolist(),
            "residual_rms": self.residual_rms,
        }


@dataclass(frozen=True)
class TwoToneResult:
    """Ensemble TLS parameters from a detuned-pump scan.

    ``omega0`` and ``t2`` are ``None`` when the scan cannot separate them
    (one detuning magnitude only); ``nc_eff`` is always reported.
    """

    omega0: float | None
    t2: float | None
    t1_closure_ratio: float
    nc_eff: float
    amplitude: float
    per_probe: tuple[ProbeCurve, ...]
    uncertainties: Mapping[str, float] = field(default_factory=dict)
    cost: float = 0.0
    iterations: int = 0
    degenerate: bool = False
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.omega0 is not None:
            if not (self.omega0 > 0 and self.t2 > 0):
                raise ValidationError("omega0 and t2 must be positive")
            expected = float(nc_effective(self.omega0, self.t2, self.t1_closure_ratio * self.t2))
            if abs(self.nc_eff / expected - 1.0) > 1e-9:
                raise ValidationError("nc_eff is inconsistent with omega0, t2 and the T1 closure")

    def to_dict(self) -> dict[str, Any]:
        return {
            "omega0": self.omega0,
            "t2": self.t2,
            "t1_closure_ratio": self.t1_closure_ratio,
            "nc_eff": self.nc_eff,
            "amplitude": self.amplitude,
            "uncertainties": dict(self.uncertainties),
            "cost": self.cost,
            "iterations": self.iterations,
            "degenerate": self.degenerate,
            "flags": list(self.flags),
            "per_probe": [c.to_dict() for c in self.per_probe],
        }


_OMEGA_BOUNDS = (1.0, 1e9)
_T2_BOUNDS = (1e-10, 1e-1)
_A_BOUNDS = (1e-6, 1e6)


def fit_twotone(
    scans: Sequence[ProbeScan],
    f_pump: float,
    p: TlsLossParams,
    *,
    t1_closure_ratio: float = DEFAULT_T1_RATIO,
    temperature: float | None = None,
    n_pump_ceiling: float | None = None,
    initial: Mapping[str, float] | None = None,
    fit_offsets: bool = False,
) -> TwoToneResult:
    """Joint fit of ``(Omega0, T2, A)`` to every probe's ``Q_i(n)`` and ``delta_f(n)``.

    Residuals are ``log Q`` differences and shift differences relative to
    each measured shift (floored at 1e-3 of the probe's largest shift), so
    both observables carry relative scatter.  Points above
    ``n_pump_ceiling`` are dropped, as the model ignores higher-order
    nonlinearity.  The start comes from a log grid over ``(Omega0, T2)``
    with ``A`` solved in closed form at each node.

    With ``fit_offsets`` each probe's shifts carry an unknown common offset
    (the error of its unpumped reference frequency).  The offset is
    profiled out by a weighted mean, so the scans should include the
    unpumped point with zero shift.
    """
    if len(scans) == 0:
        raise ValidationError("at least one probe scan is required")
    if not t1_closure_ratio > 0:
        raise ValidationError("t1_closure_ratio must be positive")
    T = p.T_ref if temperature is None else temperature
    blocks = []
    for sc in scans:
        if sc.f_probe == f_pump:
            raise ValidationError("probe and pump frequencies must differ")
        keep = np.ones(sc.n_pump.size, bool) if n_pump_ceiling is None else sc.n_pump <= n_pump_ceiling
        if keep.sum() < 3:
            raise ValidationError(f"probe at {sc.f_probe:.9g} Hz keeps fewer than 3 points under the power ceiling")
        n = sc.n_pump[keep]
        df = sc.shift[keep]
        if sc.shift_sigma is not None:
            w = sc.shift_sigma[keep]
        else:
            floor = 1e-3 * float(np.max(np.abs(df))) or 1e-300
            w = np.maximum(np.abs(df), floor)
        wq = np.ones(n.size) if sc.Q_i_sigma is None else sc.Q_i_sigma[keep] / sc.Q_i[keep]
        blocks.append((sc.f_probe, sc.f_probe - f_pump, n, np.log(sc.Q_i[keep]), df, w, wq))
    detunings = np.array([b[1] for b in blocks])
    degenerate = np.unique(np.round(np.abs(detunings), 6)).size < 2
    if degenerate:
        warnings.warn(
            "all probes share one detuning magnitude, which cannot separate Omega0 from T2; only nc_eff is reported",
            DegeneracyWarning,
            stacklevel=2,
        )
    f_col = np.concatenate([np.full(b[2].size, b[0]) for b in blocks])
    d_col = np.concatenate([np.full(b[2].size, b[1]) for b in blocks])
    n_col = np.concatenate([b[2] for b in blocks])
    logq = np.concatenate([b[3] for b in blocks])
    df_col = np.concatenate([b[4] for b in blocks])
    w_col = np.concatenate([b[5] for b in blocks])
    wq_col = np.concatenate([b[6] for b in blocks])
    edges = np.cumsum([0] + [b[2].size for b in blocks])

    def profiled(r):
        # subtract each probe's weighted mean residual (an unknown offset in hertz)
        if not fit_offsets:
            return r
        out = r.copy()
        for a, b in zip(edges[:-1], edges[1:]):
            wts = 1.0 / w_col[a:b] ** 2
            out[a:b] -= np.sum(wts * r[a:b] * w_col[a:b]) / np.sum(wts) / w_col[a:b]
        return out

    def model(omega0, t2, amplitude, check=False):
        return _forward(n_col, d_col, f_col, p, omega0, t2, t1_closure_ratio * t2, T, amplitude, check)

    def residual(x):
        omega0, t2, amplitude = np.exp(x)
        try:
            qi, df = model(omega0, t2, amplitude)
        except QuadratureError:
            return np.full(2 * n_col.size, np.nan)
        return np.concatenate([(np.log(qi) - logq) / wq_col, profiled((df - df_col) / w_col)])

    if initial is not None:
        x0 = np.log([initial["omega0"], initial["t2"], initial.get("amplitude", 1.0)])
    else:
        x0 = _grid_start(model, logq, df_col, w_col, wq_col, profiled)
    lo = np.log([_OMEGA_BOUNDS[0], _T2_BOUNDS[0], _A_BOUNDS[0]])
    hi = np.log([_OMEGA_BOUNDS[1], _T2_BOUNDS[1], _A_BOUNDS[1]])
    x0 = np.clip(x0, lo, hi)
    res = levenberg_marquardt(FitProblem(residual, x0, lo, hi, param_names=("log_omega0", "log_t2", "log_A")))
    if not res.converged:
        raise OptimizerError(f"two-tone fit did not converge in {res.iterations} iterations", residual=res.cost)
    if res.active_bounds is not None and np.any(res.active_bounds):
        names = tuple(n for n, a in zip(("omega0", "t2", "amplitude"), res.active_bounds) if a)
        raise IdentifiabilityError(f"parameters {', '.join(names)} ended on a bound", parameters=names)
    omega0, t2, amplitude = (float(v) for v in np.exp(res.params))
    nc = float(nc_effective(omega0, t2, t1_closure_ratio * t2))
    flags = []
    if not degenerate and _t2_weak(residual, res, lo, hi):
        flags.append("t2_weakly_identified")
        warnings.warn(
            f"moving T2 by a factor {PROFILE_FACTOR:g} changes chi-square by less than {PROFILE_DCHI2:g}; "
            "T2 is weakly identified (far-detuned data constrain mainly Omega0**2/detuning**2)",
            DegeneracyWarning,
            stacklevel=2,
        )
    se = res.std_errors
    cov = res.covariance
    # log nc_eff = -2 log omega0 - 2 log t2 + const
    g = np.array([-2.0, -2.0, 0.0])
    unc = {"nc_eff": nc * float(np.sqrt(max(g @ cov @ g, 0.0))), "amplitude": amplitude * float(se[2])}
    if not degenerate:
        unc.update({"omega0": omega0 * float(se[0]), "t2": t2 * float(se[1])})
    qi_m, df_m = model(omega0, t2, amplitude, check=True)
    df_m = df_col + w_col * profiled((df_m - df_col) / w_col)
    curves = []
    start = 0
    for f_probe, det, n, lq, df, w, wq in blocks:
        sl = slice(start, start + n.size)
        start += n.size
        r = np.concatenate([(np.log(qi_m[sl]) - lq) / wq, (df_m[sl] - df) / w])
        curves.append(ProbeCurve(f_probe, det, n.copy(), df_m[sl].copy(), qi_m[sl].copy(), float(np.sqrt(np.mean(r**2)))))
    return TwoToneResult(
        omega0=None if degenerate else omega0,
        t2=None if degenerate else t2,
        t1_closure_ratio=t1_closure_ratio,
        nc_eff=nc,
        amplitude=amplitude,
        per_probe=tuple(curves),
        uncertainties=unc,
        cost=res.cost,
        iterations=res.iterations,
        degenerate=bool(degenerate),
        flags=tuple(flags),
    )


def _t2_weak(residual, res, lo, hi) -> bool:
    """True when fixing T2 a factor ``PROFILE_FACTOR`` away costs less than ``PROFILE_DCHI2``."""
    dof = max(res.residuals.size - res.params.size, 1)
    sigma2 = 2.0 * res.cost / dof
    if sigma2 <= 0:
        return False
    for step in (math.log(PROFILE_FACTOR), -math.log(PROFILE_FACTOR)):
        lt2 = res.params[1] + step
        if not lo[1] <= lt2 <= hi[1]:
            continue

        def fixed(y, lt2=lt2):
            return residual(np.array([y[0], lt2, y[1]]))

        start = np.array([res.params[0], res.params[2]])
        try:
            prof = levenberg_marquardt(FitProblem(fixed, start, lo[[0, 2]], hi[[0, 2]], max_iterations=100))
        except NumericalError:
            continue
        if 2.0 * (prof.cost - res.cost) / sigma2 < PROFILE_DCHI2:
            return True
    return False


def _grid_start(model, logq, df, w, wq, profiled) -> np.ndarray:
    best = (math.inf, None)
    for lo0 in np.log(np.logspace(3, 6, 7)):
        for lt2 in np.log(np.logspace(-7, -4, 7)):
            try:
                qi, shape = model(math.exp(lo0), math.exp(lt2), 1.0)
            except QuadratureError:
                continue
            # profiling is linear, so it commutes with the closed-form amplitude
            a = profiled(shape / w)
            b = profiled(df / w)
            denom = float(a @ a)
            amp = float(a @ b) / denom if denom > 0 else 1.0
            amp = min(max(amp, _A_BOUNDS[0]), _A_BOUNDS[1])
            cost = float(np.sum(((np.log(qi) - logq) / wq) ** 2) + np.sum((amp * a - b) ** 2))
            if cost < best[0]:
                best = (cost, np.array([lo0, lt2, math.log(amp)]))
    if best[1] is None:
        raise OptimizerError("no grid point gave a finite two-tone model")
    return best[1]
