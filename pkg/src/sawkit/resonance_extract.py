"""Resonance extraction from one-port reflection traces.

Pipeline, per mode::

    remove_background -> circle_fit -> phase_fit -> decompose_q

followed by a joint least-squares polish of the full complex model

    S11(f) = a exp(i(alpha - 2 pi f tau)) [1 - (2 Q_l/Q_c) / (1 + 2i Q_l (f - f0)/f0)]

started from the stage estimates.  The polish supplies the covariance used
for the reported uncertainties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks, medfilt

from .domain import ComplexTrace, ResonanceFit
from .errors import (
    DegenerateGeometryError,
    InsufficientSpanError,
    OptimizerError,
    SawkitError,
    UnphysicalFitError,
    ValidationError,
)
from .fit_engine import (
    FitProblem,
    FitResult,
    bootstrap_uncertainty,
    levenberg_marquardt,
)

__all__ = [
    "CircleParams",
    "BackgroundModel",
    "PhaseFit",
    "circle_fit",
    "estimate_dip",
    "remove_background",
    "apply_background",
    "phase_fit",
    "decompose_q",
    "fit_resonance",
    "find_modes",
    "fit_modes",
]

MIN_SPAN_LINEWIDTHS = 5.0


@dataclass(frozen=True)
class CircleParams:
    center: complex
    radius: float
    taubin_residual: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError(f"circle radius must be positive, got {self.radius!r}")
        if not self.taubin_residual >= 0:
            raise ValidationError("taubin_residual must be non-negative")


@dataclass(frozen=True)
class BackgroundModel:
    amplitude: float
    phase_offset: float
    cable_delay_tau: float

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValidationError(f"background amplitude must be positive, got {self.amplitude!r}")

    def factor(self, f) -> np.ndarray:
        return self.amplitude * np.exp(1j * (self.phase_offset - 2.0 * np.pi * np.asarray(f, float) * self.cable_delay_tau))


def circle_fit(points) -> CircleParams:
    """Taubin algebraic circle fit (SVD formulation, data centred first).

    Exact on noiseless circular data and covariant under rotation and
    translation.  ``taubin_residual`` is the RMS geometric distance of the
    points from the fitted circle.
    """
    z = np.asarray(points, dtype=complex).ravel()
    if z.size < 3:
        raise ValidationError(f"circle fit needs at least 3 points, got {z.size}")
    zm = z.mean()
    u, v = (z - zm).real, (z - zm).imag
    rr = u * u + v * v
    rr_mean = rr.mean()
    if rr_mean == 0:
        raise DegenerateGeometryError("all points coincide")
    scale = math.sqrt(rr_mean)
    # work in units of the point spread so the SVD is well scaled
    us, vs, rs = u / scale, v / scale, rr / rr_mean
    m = np.column_stack([(rs - 1.0) / 2.0, us, vs])
    _, sv, vt = np.linalg.svd(m, full_matrices=False)
    a = vt[-1]
    a0 = a[0] / 2.0
    a3 = -a0
    if abs(a0) < 1e-10 * math.hypot(a[1], a[2]):
        raise DegenerateGeometryError("points are collinear; no finite circle fits them")
    cu, cv = -a[1] / (2.0 * a0), -a[2] / (2.0 * a0)
    radius = math.sqrt(a[1] ** 2 + a[2] ** 2 - 4.0 * a0 * a3) / (2.0 * abs(a0))
    center = zm + scale * complex(cu, cv)
    radius *= scale
    resid = float(np.sqrt(np.mean((np.abs(z - center) - radius) ** 2)))
    return CircleParams(center=complex(center), radius=float(radius), taubin_residual=resid)


@dataclass(frozen=True)
class DipEstimate:
    f0: float
    Q_l: float
    index: int
    baseline: float
    depth: float
    bracketed: bool


def estimate_dip(f: np.ndarray, s: np.ndarray) -> DipEstimate:
    """f0 from the minimum of the 5-point median-smoothed |S11|, Q_l from its 3 dB width.

    The half-power level is taken midway between the off-resonant baseline
    and the dip floor in |S11|**2, which for the one-port line shape is
    crossed exactly at ``f0 * (1 +- 1/(2 Q_l))``.
    """
    mag = np.abs(s)
    smooth = medfilt(mag, 5) if mag.size >= 5 else mag
    # medfilt zero-pads; keep the raw edge values
    smooth[:2], smooth[-2:] = mag[:2], mag[-2:]
    i0 = int(np.argmin(smooth))
    edge = max(2, mag.size // 20)
    baseline = float(np.median(np.concatenate([smooth[:edge], smooth[-edge:]])))
    floor = float(smooth[i0])
    half = 0.5 * (baseline**2 + floor**2)
    above = smooth**2 >= half
    left = np.nonzero(above[:i0])[0]
    right = np.nonzero(above[i0:])[0]
    bracketed = left.size > 0 and right.size > 0

    def crossing(j0, j1):
        y0, y1 = smooth[j0] ** 2 - half, smooth[j1] ** 2 - half
        t = y0 / (y0 - y1) if y0 != y1 else 0.5
        return f[j0] + t * (f[j1] - f[j0])

    if bracketed:
        jl = left[-1]
        jr = i0 + right[0]
        f_lo = crossing(jl, jl + 1)
        f_hi = crossing(jr - 1, jr)
        width = max(f_hi - f_lo, f[1] - f[0])
    else:
        width = f[-1] - f[0]
    f0 = float(f[i0])
    return DipEstimate(f0, f0 / width, i0, baseline, baseline - floor, bracketed)


def apply_background(trace: ComplexTrace, background: BackgroundModel) -> ComplexTrace:
    """Inverse of the normalisation done by :func:`remove_background`."""
    return trace.with_data(trace.frequencies, trace.s11 * background.factor(trace.frequencies))


def _initial_delay(f, s, est: DipEstimate) -> float:
    # Shared slope, one intercept per side: an over-coupled mode adds a
    # full 2 pi phase step across the resonance that a single line would eat.
    lw = est.f0 / est.Q_l
    left = f < est.f0 - 2.5 * lw
    right = f > est.f0 + 2.5 * lw
    if left.sum() < 2 or right.sum() < 2:
        n = max(2, f.size // 10)
        left = np.zeros(f.size, bool)
        right = np.zeros(f.size, bool)
        left[:n] = True
        right[-n:] = True
    phase = np.unwrap(np.angle(s))
    sel = left | right
    A = np.column_stack([f[sel] - f.mean(), left[sel].astype(float), right[sel].astype(float)])
    slope = np.linalg.lstsq(A, phase[sel], rcond=None)[0][0]
    return -slope / (2.0 * np.pi)


def _coarse_background(trace: ComplexTrace):
    f, s = trace.frequencies, trace.s11
    if f.size < 20:
        raise InsufficientSpanError(
            f"background estimation needs at least 20 points spanning {MIN_SPAN_LINEWIDTHS:g} linewidths; got {f.size} points",
        )
    est = estimate_dip(f, s)
    span = f[-1] - f[0]
    required = MIN_SPAN_LINEWIDTHS * est.f0 / est.Q_l
    if not est.bracketed or span < required:
        raise InsufficientSpanError(
            f"trace spans {span:.6g} Hz but background estimation needs at least "
            f"{MIN_SPAN_LINEWIDTHS:g} linewidths = {required:.6g} Hz",
            required_span=required,
        )
    tau = _initial_delay(f, s, est)
    f0, ql = est.f0, est.Q_l
    # Alternate between the mode estimate and the line estimate: dividing
    # the current mode model out leaves the line alone, whose unwrapped phase
    # gives a delay free of the mode's own phase tails.
    for _ in range(3):
        corrected = s * np.exp(2j * np.pi * f * tau)
        circle = circle_fit(corrected)
        pf = phase_fit(trace.with_data(f, corrected), circle, f0_guess=f0, q_guess=ql)
        f0, ql = pf.f0, pf.Q_l
        off_point = circle.center - circle.radius * np.exp(1j * pf.theta0)
        k = min(2.0 * circle.radius / abs(off_point), 2.0 - 1e-6)
        mode = 1.0 - k / (1.0 + 2j * ql * (f - f0) / f0)
        # residual phase against the current model is small, so no unwrapping;
        # weighting by |mode| mutes the noisy points at the bottom of the dip
        resid = np.angle(corrected * np.conj(mode * np.exp(1j * np.angle(off_point))))
        slope = np.polyfit(f - f.mean(), resid, 1, w=np.abs(mode))[0]
        tau -= slope / (2.0 * np.pi)
    corrected = s * np.exp(2j * np.pi * f * tau)
    circle = circle_fit(corrected)
    pf = phase_fit(trace.with_data(f, corrected), circle, f0_guess=f0, q_guess=ql)
    off_point = circle.center - circle.radius * np.exp(1j * pf.theta0)
    bg = BackgroundModel(amplitude=float(abs(off_point)), phase_offset=float(np.angle(off_point)), cable_delay_tau=float(tau))
    return bg, pf.f0, pf.Q_l, 2.0 * circle.radius / bg.amplitude


def _estimate_background(trace: ComplexTrace):
    bg, f0, ql, k = _coarse_background(trace)
    pol = _polish(trace.frequencies, trace.s11, bg, f0, ql, k)
    res = pol.result
    if not res.converged:
        raise OptimizerError(f"background refinement did not converge; final cost {res.cost:.6g}", residual=res.cost)
    a, phase, tau, _, _, _ = pol.unpack(res.params)
    return BackgroundModel(float(a), float(_wrap(phase)), float(tau)), pol


def remove_background(trace: ComplexTrace, background: BackgroundModel | None = None) -> tuple[ComplexTrace, BackgroundModel]:
    """Divide out amplitude, phase and cable delay of the measurement line.

    The delay starts from a linear fit to the unwrapped off-resonant phase
    and is refined by making the corrected points as circular as possible.
    The off-resonant point is the one diametrically opposite the resonance
    on the fitted circle; its modulus and argument give amplitude and phase.
    These estimates then seed a least-squares fit of the full line-plus-mode
    model, whose line parameters are returned.

    Passing ``background`` skips estimation and applies it as given.
    """
    if background is None:
        background, _ = _estimate_background(trace)
    f = trace.frequencies
    return trace.with_data(f, trace.s11 / background.factor(f)), background


@dataclass(frozen=True)
class PhaseFit:
    f0: float
    Q_l: float
    theta0: float
    result: FitResult = field(repr=False)


def _wrap(x):
    return np.remainder(np.asarray(x) + np.pi, 2.0 * np.pi) - np.pi


def phase_fit(trace_normalized: ComplexTrace, circle: CircleParams, f0_guess: float | None = None, q_guess: float | None = None) -> PhaseFit:
    """Fit ``theta(f) = theta0 + 2 arctan(2 Q_l (1 - f/f0))`` to the phase about the circle centre.

    Without guesses, f0 starts where the trace moves fastest along the
    circle and Q_l from the points where the phase has turned by +-pi/2.
    """
    f = trace_normalized.frequencies
    z = trace_normalized.s11 - circle.center
    theta = np.angle(z)
    if f0_guess is None:
        speed = np.abs(np.gradient(trace_normalized.s11, f))
        if speed.size >= 5:
            speed = medfilt(speed, 5)
        f0_guess = float(f[int(np.argmax(speed))])
    i0 = int(np.argmin(np.abs(f - f0_guess)))
    theta0_guess = float(theta[i0])
    if q_guess is None:
        rel = _wrap(theta - theta0_guess)
        lo = np.nonzero(rel[:i0] >= math.pi / 2)[0]
        hi = np.nonzero(rel[i0:] <= -math.pi / 2)[0]
        if lo.size and hi.size:
            width = f[i0 + hi[0]] - f[lo[-1]]
        else:
            width = (f[-1] - f[0]) / 10.0
        q_guess = f0_guess / max(width, f[1] - f[0])
    lw = f0_guess / q_guess
    x_lo, x_hi = (f[0] - f0_guess) / lw, (f[-1] - f0_guess) / lw

    def unpack(p):
        return p[0], f0_guess + p[1] * lw, p[2] * q_guess

    def residual(p):
        th0, f0, ql = unpack(p)
        return _wrap(theta - th0 - 2.0 * np.arctan(2.0 * ql * (1.0 - f / f0)))

    problem = FitProblem(residual, [theta0_guess, 0.0, 1.0], [-10.0, x_lo, 1e-3], [10.0, x_hi, 1e3])
    res = levenberg_marquardt(problem)
    if not res.converged:
        raise OptimizerError(f"phase fit did not converge; final cost {res.cost:.6g}", residual=res.cost)
    th0, f0, ql = unpack(res.params)
    if not (f[0] <= f0 <= f[-1]):
        raise OptimizerError(f"phase fit put f0={f0:.9g} outside the trace span", residual=res.cost)
    return PhaseFit(f0=float(f0), Q_l=float(ql), theta0=float(_wrap(th0)), result=res)


def decompose_q(circle: CircleParams, Q_l: float, background: BackgroundModel) -> tuple[float, float]:
    """Split Q_l using the one-port relation ``2 r / a = 2 Q_l / Q_c``.

    ``circle`` must be in the same frame as ``background.amplitude``.
    """
    if not Q_l > 0:
        raise ValidationError(f"Q_l must be positive, got {Q_l!r}")
    ratio = circle.radius / background.amplitude
    if ratio >= 1.0:
        raise UnphysicalFitError(
            f"circle radius is {ratio:.4g} x the background amplitude (>= 1); "
            "re-estimate the background"
        )
    Q_c = Q_l / ratio
    Q_i = 1.0 / (1.0 / Q_l - 1.0 / Q_c)
    return Q_i, Q_c


# --- full model polish ------------------------------------------------------


@dataclass
class _Polish:
    problem: FitProblem
    result: FitResult
    f_ref: float
    lw: float
    q_ref: float
    amp_ref: float
    alpha_ref: float
    tau_ref: float
    tau_unit: float

    def unpack(self, p):
        """(a, line phase at f = 0, tau, f0, Q_l, 2Q_l/Q_c) from scaled parameters."""
        tau = self.tau_ref + p[2] * self.tau_unit
        alpha = self.alpha_ref + p[1]
        return (
            p[0] * self.amp_ref,
            alpha + 2.0 * np.pi * self.f_ref * tau,
            tau,
            self.f_ref + p[3] * self.lw,
            p[4] * self.q_ref,
            p[5],
        )

    def q_values(self, p) -> tuple[float, float]:
        q, k = p[4] * self.q_ref, p[5]
        return q / (1.0 - k / 2.0), 2.0 * q / k


def _polish(f, s, bg: BackgroundModel, f0, ql, k) -> _Polish:
    """Joint LM over (a, alpha, tau, f0, Q_l, 2Q_l/Q_c) in well-scaled units.

    The line phase is referenced to the starting f0 so that phase and delay
    are nearly uncorrelated.
    """
    lw = f0 / ql
    span = f[-1] - f[0]
    tau_unit = 1.0 / (2.0 * np.pi * span)
    fc = f - f0
    alpha_ref = bg.phase_offset - 2.0 * np.pi * f0 * bg.cable_delay_tau

    def residual(p):
        a = p[0] * bg.amplitude
        tau = bg.cable_delay_tau + p[2] * tau_unit
        f_r = f0 + p[3] * lw
        q = p[4] * ql
        d = a * np.exp(1j * (alpha_ref + p[1] - 2.0 * np.pi * fc * tau)) * (
            1.0 - p[5] / (1.0 + 2j * q * (f - f_r) / f_r)
        ) - s
        return np.concatenate([d.real, d.imag])

    x_lo, x_hi = (f[0] - f0) / lw, (f[-1] - f0) / lw
    problem = FitProblem(
        residual,
        [1.0, 0.0, 0.0, 0.0, 1.0, min(max(k, 1e-6), 2.0 - 1e-6)],
        [1e-3, -math.pi, -1e3, x_lo, 1e-3, 0.0],
        [1e3, math.pi, 1e3, x_hi, 1e3, 2.0],
    )
    res = levenberg_marquardt(problem)
    return _Polish(problem, res, f0, lw, ql, bg.amplitude, alpha_ref, bg.cable_delay_tau, tau_unit)


def _polish_uncertainties(pol: _Polish) -> dict[str, float]:
    p = pol.result.params
    q, k = p[4] * pol.q_ref, p[5]
    # d(f0, Q_l, Q_c, Q_i) / d(p3, p4, p5)
    jac = np.zeros((4, p.size))
    jac[0, 3] = pol.lw
    jac[1, 4] = pol.q_ref
    jac[2, 4] = 2.0 * pol.q_ref / k
    jac[2, 5] = -2.0 * q / k**2
    jac[3, 4] = pol.q_ref / (1.0 - k / 2.0)
    jac[3, 5] = 0.5 * q / (1.0 - k / 2.0) ** 2
    var = np.einsum("ij,jk,ik->i", jac, pol.result.covariance, jac)
    se = np.sqrt(np.clip(var, 0.0, None))
    return {"f0": float(se[0]), "Q_l": float(se[1]), "Q_c": float(se[2]), "Q_i": float(se[3])}


def fit_resonance(trace: ComplexTrace, *, bootstrap: int = 0, seed: int = 0) -> ResonanceFit:
    """Extract (f0, Q_l, Q_i, Q_c) from a single-mode trace.

    Standard errors come from the covariance of the full-model fit done
    during background estimation.  ``bootstrap`` > 0 adds residual-bootstrap
    errors (keys with a ``_bootstrap`` suffix) from that many refits.
    Errors from the stages are re-raised tagged with the stage name.
    """
    stage = "remove_background"
    diagnostics: dict[str, object] = {}
    f, s = trace.frequencies, trace.s11
    try:
        bg, pol = _estimate_background(trace)
        normalized, _ = remove_background(trace, bg)
        stage = "circle_fit"
        circle = circle_fit(normalized.s11)
        stage = "phase_fit"
        pf = phase_fit(normalized, circle, f0_guess=pol.unpack(pol.result.params)[3])
        stage = "decompose_q"
        raw_circle = CircleParams(circle.center * bg.amplitude, circle.radius * bg.amplitude, circle.taubin_residual * bg.amplitude)
        Q_i, Q_c = decompose_q(raw_circle, pf.Q_l, bg)
        f0, Q_l = pf.f0, pf.Q_l
        uncertainties = _polish_uncertainties(pol)
        diagnostics["iterations"] = pol.result.iterations
        diagnostics["condition_number"] = pol.result.condition_number
        if bootstrap:
            stage = "bootstrap"
            boot = bootstrap_uncertainty(pol.problem, pol.result, resamples=bootstrap, seed=seed)
            uncertainties["f0_bootstrap"] = float(boot.std_errors[3] * pol.lw)
            uncertainties["Q_l_bootstrap"] = float(boot.std_errors[4] * pol.q_ref)
            qs = np.array([pol.q_values(p) for p in boot.samples])
            uncertainties["Q_i_bootstrap"] = float(qs[:, 0].std(ddof=1))
            uncertainties["Q_c_bootstrap"] = float(qs[:, 1].std(ddof=1))
            diagnostics["bootstrap_disagreement"] = [float(x) for x in boot.disagreement]
            diagnostics["bootstrap_failures"] = boot.failures
        stage = "report"
        model_n = 1.0 - (2.0 * Q_l / Q_c) / (1.0 + 2j * Q_l * (f - f0) / f0)
        residual_rms = float(np.sqrt(np.mean(np.abs(normalized.s11 - model_n) ** 2)))
        depth = float(np.min(medfilt(np.abs(normalized.s11), 5)))
        k = 2.0 * Q_l / Q_c
        diagnostics.update(
            {
                "coupling": "over" if k > 1.0 else "under",
                # |S11(f0)| = |1 - 2r| in the normalised frame; a mismatch flags a bad background
                "dip_depth": depth,
                "dip_depth_from_radius": abs(1.0 - 2.0 * circle.radius),
                "background_amplitude": bg.amplitude,
                "background_phase": bg.phase_offset,
                "cable_delay_tau": bg.cable_delay_tau,
                "circle_residual": circle.taubin_residual,
            }
        )
    except SawkitError as exc:
        raise exc.with_stage(stage)
    return ResonanceFit(
        f0=float(f0),
        Q_l=float(Q_l),
        Q_i=float(Q_i),
        Q_c=float(Q_c),
        circle_center=circle.center,
        circle_radius=circle.radius,
        residual_rms=residual_rms,
        uncertainties=uncertainties,
        label=trace.label,
        drive_power_dbm=trace.drive_power_dbm,
        temperature_K=trace.temperature_K,
        diagnostics=diagnostics,
    )


# --- multi-mode traces ------------------------------------------------------


@dataclass(frozen=True)
class ModeWindow:
    f_guess: float
    linewidth: float
    f_lo: float
    f_hi: float


def find_modes(trace: ComplexTrace, prominence: float | None = None) -> list[ModeWindow]:
    """Locate dips in |S11| and assign each a fitting window.

    Window half-width is ``max(5 linewidths, FSR/3)`` clipped to half the
    distance to each neighbouring dip.  ``prominence`` defaults to eight
    times a robust noise estimate of the smoothed magnitude.
    """
    f = trace.frequencies
    mag = np.abs(trace.s11)
    smooth = medfilt(mag, 5) if mag.size >= 5 else mag.copy()
    smooth[:2], smooth[-2:] = mag[:2], mag[-2:]
    if prominence is None:
        noise = 1.4826 * np.median(np.abs(np.diff(mag))) / math.sqrt(2.0)
        prominence = max(8.0 * noise, 1e-3 * float(np.max(mag)))
    peaks, props = find_peaks(-smooth, prominence=prominence)
    if peaks.size == 0:
        return []
    baseline = np.median(smooth)
    widths = []
    for i in peaks:
        floor = smooth[i]
        half = 0.5 * (baseline**2 + floor**2)
        lo = i
        while lo > 0 and smooth[lo] ** 2 < half:
            lo -= 1
        hi = i
        while hi < f.size - 1 and smooth[hi] ** 2 < half:
            hi += 1
        widths.append(max(f[hi] - f[lo], f[1] - f[0]))
    # noise can split one flat-bottomed dip into neighbouring minima; keep
    # the deepest of any group closer than a linewidth
    order = np.argsort(smooth[peaks])
    keep: list[int] = []
    for j in order:
        if all(abs(f[peaks[j]] - f[peaks[i]]) > max(widths[j], widths[i]) for i in keep):
            keep.append(int(j))
    keep.sort()
    peaks = peaks[keep]
    widths = [widths[j] for j in keep]
    centers = f[peaks]
    fsr = float(np.median(np.diff(centers))) if centers.size > 1 else math.inf
    windows = []
    for j, (fc, lw) in enumerate(zip(centers, widths)):
        half = max(MIN_SPAN_LINEWIDTHS * lw, fsr / 3.0) if math.isfinite(fsr) else MIN_SPAN_LINEWIDTHS * lw
        left_gap = fc - centers[j - 1] if j > 0 else math.inf
        right_gap = centers[j + 1] - fc if j + 1 < centers.size else math.inf
        lo = fc - min(half, 0.5 * left_gap)
        hi = fc + min(half, 0.5 * right_gap)
        windows.append(ModeWindow(float(fc), float(lw), float(max(lo, f[0])), float(min(hi, f[-1]))))
    return windows


def fit_modes(trace: ComplexTrace, windows: Sequence[ModeWindow] | None = None, **kwargs) -> list[ResonanceFit]:
    """Fit every mode of a multi-mode trace in its own window."""
    if windows is None:
        windows = find_modes(trace)
    fits = []
    for k, w in enumerate(windows):
        sub = trace.window(w.f_lo, w.f_hi)
        sub = sub.with_data(sub.frequencies, sub.s11)
        fit = fit_resonance(
            ComplexTrace(
                sub.frequencies,
                sub.s11,
                drive_power_dbm=trace.drive_power_dbm,
                temperature_K=trace.temperature_K,
                label=f"{trace.label}#mode{k}" if trace.label else f"mode{k}",
                extra=dict(trace.extra),
            ),
            **kwargs,
        )
        fits.append(fit)
    return fits
