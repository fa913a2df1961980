"""Forward model of a one-port SAW resonator and synthetic S11 traces.

Geometry enters through four relations:

* resonance at ``v / (2 p)``;
* Bragg-mirror reflection ``|Gamma| = tanh(r_s N_g)``;
* free spectral range ``df = f0 / (L/p + 1/|r_s|)``;
* diffraction-limited ``Q_d = c_d (w / lambda)**2`` with ``lambda = 2 p``.

The mirror stopband is taken as ``f0 * (1 +- |r_s|/pi)`` and the cavity
modes are the comb ``f0 + k * df`` inside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .domain import ComplexTrace, DeviceGeometry
from .errors import RankDeficiencyError, ValidationError
from .fit_engine import FitProblem, levenberg_marquardt

__all__ = [
    "Mode",
    "ModeComb",
    "SynthesisSpec",
    "RsFit",
    "resonance_frequency",
    "implied_velocity",
    "mirror_reflectivity",
    "fsr_from_length",
    "free_spectral_range",
    "cavity_length_for_fsr",
    "fit_rs_from_fsr",
    "diffraction_q",
    "leakage_q",
    "combine_q",
    "stopband",
    "mode_comb",
    "single_mode_comb",
    "linewidth_grid",
    "s11_model",
    "derive_seed",
    "synthesize_s11",
    "RNG_DESCRIPTION",
]

RNG_DESCRIPTION = "numpy.random.Generator(PCG64(SeedSequence(seed))); re then im normal draws"


def resonance_frequency(g: DeviceGeometry) -> float:
    return g.saw_velocity_v / (2.0 * g.pitch_p)


def implied_velocity(f0: float, pitch: float) -> float:
    """SAW velocity implied by a measured resonance at a given pitch."""
    return 2.0 * pitch * f0


def mirror_reflectivity(rs, Ng):
    """``tanh(rs * Ng)``, kept strictly below one for any finite input."""
    rs_arr = np.asarray(rs, dtype=float)
    ng = np.asarray(Ng, dtype=float)
    if np.any(~((rs_arr > 0) & (rs_arr < 1))):
        raise ValidationError(f"per-electrode reflectivity must lie in (0, 1), got {rs!r}")
    if np.any(~(ng >= 0)) or np.any(~np.isfinite(ng)):
        raise ValidationError(f"mirror periods must be finite and non-negative, got {Ng!r}")
    gamma = np.minimum(np.tanh(rs_arr * ng), np.nextafter(1.0, 0.0))
    return float(gamma) if gamma.ndim == 0 else gamma


def fsr_from_length(L, f0, pitch, rs):
    L = np.asarray(L, dtype=float)
    out = f0 / (L / pitch + 1.0 / rs)
    return float(out) if out.ndim == 0 else out


def free_spectral_range(g: DeviceGeometry, f0: float) -> float:
    if not f0 > 0:
        raise ValidationError(f"f0 must be positive, got {f0!r}")
    return fsr_from_length(g.cavity_length_L, f0, g.pitch_p, g.reflectivity_rs)


def cavity_length_for_fsr(fsr, f0, pitch, rs):
    """Cavity length that produces a given FSR (inverse of :func:`fsr_from_length`)."""
    L = pitch * (f0 / np.asarray(fsr, dtype=float) - 1.0 / rs)
    # allow rounding noise at the L -> 0 limit
    if np.any(L < -1e-12 * pitch / rs):
        raise ValidationError("requested FSR exceeds the L -> 0 limit f0*|r_s|")
    L = np.maximum(L, 0.0)
    return float(L) if L.ndim == 0 else L


@dataclass(frozen=True)
class RsFit:
    rs: float
    stderr: float
    residual_rms: float
    iterations: int


def fit_rs_from_fsr(samples: Iterable[tuple[float, float]], f0: float, pitch: float, rs_guess: float = 0.02) -> RsFit:
    """Least-squares ``|r_s|`` from measured ``(L, fsr)`` pairs.

    Residuals are relative (``model/fsr - 1``) so multiplicative scatter is
    weighted evenly across cavity lengths.
    """
    data = np.asarray(list(samples), dtype=float).reshape(-1, 2)
    L, fsr = data[:, 0], data[:, 1]
    if L.size < 2 or np.ptp(L) == 0:
        raise RankDeficiencyError(
            f"need at least two samples with distinct cavity lengths, got {L.size} sample(s)"
        )
    if np.any(fsr <= 0) or np.any(L < 0):
        raise ValidationError("FSR values must be positive and lengths non-negative")

    # fitting 1/|r_s| keeps the model linear in the parameter's denominator
    def residual(x):
        return f0 / (L / pitch + x[0]) / fsr - 1.0

    x0 = 1.0 / rs_guess
    res = levenberg_marquardt(FitProblem(residual, [x0], [1.0], [1e9], tolerance_step=1e-14))
    inv = res.params[0]
    rs = 1.0 / inv
    stderr = res.std_errors[0] / inv**2
    return RsFit(rs=rs, stderr=float(stderr), residual_rms=float(np.sqrt(np.mean(res.residuals**2))), iterations=res.iterations)


def diffraction_q(g: DeviceGeometry, c_d: float = 1.0) -> float:
    """``c_d * (w / lambda)**2``; ``c_d`` is a calibration constant, not physics."""
    if not c_d > 0:
        raise ValidationError(f"c_d must be positive, got {c_d!r}")
    return c_d * (g.aperture_w / g.wavelength) ** 2


def leakage_q(g: DeviceGeometry) -> float:
    """Q from energy escaping through both mirrors.

    ``pi * (L/p + 1/|r_s|) / (1 - |Gamma|**2)``.  A synthesis convenience
    for building fixtures with L- and N_g-dependent loss.
    """
    gamma = mirror_reflectivity(g.reflectivity_rs, g.mirror_periods_Ng)
    return math.pi * (g.cavity_length_L / g.pitch_p + 1.0 / g.reflectivity_rs) / (1.0 - gamma * gamma)


def combine_q(*qs: float) -> float:
    """Parallel combination ``1/Q = sum 1/Q_k``."""
    return 1.0 / sum(1.0 / q for q in qs)


@dataclass(frozen=True)
class Mode:
    frequency: float
    Q_i: float
    Q_c: float

    @property
    def Q_l(self) -> float:
        return 1.0 / (1.0 / self.Q_i + 1.0 / self.Q_c)

    @property
    def linewidth(self) -> float:
        return self.frequency / self.Q_l


@dataclass(frozen=True)
class ModeComb:
    modes: tuple[Mode, ...]
    stopband_center: float
    fsr: float | None
    reflectivity_rs: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        f = self.frequencies
        if f.size > 1:
            if np.any(np.diff(f) <= 0):
                raise ValidationError("mode frequencies must be strictly increasing")
            if self.fsr is None or np.max(np.abs(np.diff(f) / self.fsr - 1.0)) > 1e-9:
                raise ValidationError("modes must be evenly spaced by the FSR")
        if self.reflectivity_rs is not None and f.size:
            lo, hi = stopband(self.stopband_center, self.reflectivity_rs)
            tol = 1e-12 * self.stopband_center
            if f[0] < lo - tol or f[-1] > hi + tol:
                raise ValidationError("modes must lie inside the mirror stopband")
        for m in self.modes:
            if not (m.Q_i > 0 and m.Q_c > 0):
                raise ValidationError("mode quality factors must be positive")

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([m.frequency for m in self.modes], dtype=float)

    def __len__(self) -> int:
        return len(self.modes)


def stopband(center: float, rs: float) -> tuple[float, float]:
    half = center * rs / math.pi
    return center - half, center + half


def _per_mode(values, count: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(values, dtype=float), (count,)) if np.ndim(values) == 0 else np.asarray(values, float)
    if arr.shape != (count,):
        raise ValidationError(f"{name} must be a scalar or have one entry per mode ({count})")
    if np.any(arr <= 0):
        raise ValidationError(f"{name} must be positive")
    return arr


def mode_comb(
    g: DeviceGeometry,
    per_mode_Qi,
    per_mode_Qc,
    *,
    include_leakage: bool = True,
    diffraction_c_d: float | None = None,
) -> ModeComb:
    """Cavity modes ``f0 + k*fsr`` inside the stopband, center mode always present.

    ``per_mode_Qi`` is the propagation-limited internal Q (scalar or one per
    mode, lowest frequency first).  Mirror leakage and, when
    ``diffraction_c_d`` is given, diffraction are folded into each mode's Q_i.
    """
    center = resonance_frequency(g)
    fsr = free_spectral_range(g, center)
    lo, hi = stopband(center, g.reflectivity_rs)
    kmax = int(math.floor((hi - center) / fsr))
    # guard the floor against a rounding step just below an exact multiple
    if center + (kmax + 1) * fsr <= hi:
        kmax += 1
    ks = np.arange(-kmax, kmax + 1)
    freqs = center + ks * fsr
    qi = _per_mode(per_mode_Qi, ks.size, "per_mode_Qi")
    qc = _per_mode(per_mode_Qc, ks.size, "per_mode_Qc")
    extra = []
    if include_leakage:
        extra.append(leakage_q(g))
    if diffraction_c_d is not None:
        extra.append(diffraction_q(g, diffraction_c_d))
    modes = tuple(Mode(float(f), combine_q(float(q), *extra), float(c)) for f, q, c in zip(freqs, qi, qc))
    return ModeComb(modes, center, fsr, g.reflectivity_rs)


def single_mode_comb(f0: float, Q_i: float, Q_c: float) -> ModeComb:
    return ModeComb((Mode(f0, Q_i, Q_c),), f0, None)


def linewidth_grid(f0: float, Q_l: float, span_linewidths: float = 5.0, points: int = 1001) -> tuple[float, float, int]:
    """``(start, stop, points)`` covering ``f0 +- span_linewidths * f0/Q_l``."""
    half = span_linewidths * f0 / Q_l
    return f0 - half, f0 + half, points


@dataclass(frozen=True)
class SynthesisSpec:
    mode_comb: ModeComb
    frequency_grid: tuple[float, float, int]
    noise_sigma: float = 0.0
    cable_delay_tau: float = 0.0
    background_amplitude: float = 1.0
    background_phase: float = 0.0

    def __post_init__(self):
        start, stop, points = self.frequency_grid
        if int(points) != points or points < 3:
            raise ValidationError(f"frequency grid needs at least 3 points, got {points!r}")
        if not start < stop:
            raise ValidationError("frequency grid start must be below stop")
        if not self.noise_sigma >= 0:
            raise ValidationError("noise_sigma must be non-negative")
        if not self.background_amplitude > 0:
            raise ValidationError("background_amplitude must be positive")
        object.__setattr__(self, "frequency_grid", (float(start), float(stop), int(points)))

    @property
    def frequencies(self) -> np.ndarray:
        start, stop, points = self.frequency_grid
        return np.linspace(start, stop, points)


def s11_model(f, modes: Sequence[Mode], amplitude: float = 1.0, phase: float = 0.0, tau: float = 0.0) -> np.ndarray:
    """Noiseless response: product of one-port mode responses times the line background."""
    f = np.asarray(f, dtype=float)
    s = np.ones(f.shape, dtype=complex)
    for m in modes:
        ql = m.Q_l
        s *= 1.0 - (2.0 * ql / m.Q_c) / (1.0 + 2j * ql * (f - m.frequency) / m.frequency)
    return amplitude * np.exp(1j * (phase - 2.0 * np.pi * f * tau)) * s


def derive_seed(seed: int, index: int) -> int:
    """Per-task seed from a parent seed and a task index."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


def synthesize_s11(spec: SynthesisSpec, seed: int, *, label: str = "", drive_power_dbm=None, temperature_K=None, extra=None) -> ComplexTrace:
    """Deterministic synthetic trace; noise is drawn as described by :data:`RNG_DESCRIPTION`."""
    f = spec.frequencies
    s = s11_model(f, spec.mode_comb.modes, spec.background_amplitude, spec.background_phase, spec.cable_delay_tau)
    rng = np.random.default_rng(int(seed))
    noise_re = rng.normal(0.0, 1.0, f.size)
    noise_im = rng.normal(0.0, 1.0, f.size)
    s = s + spec.noise_sigma * (noise_re + 1j * noise_im)
    meta = {"rng": RNG_DESCRIPTION, "seed": int(seed)}
    if extra:
        meta.update(extra)
    return ComplexTrace(f, s, drive_power_dbm=drive_power_dbm, temperature_K=temperature_K, label=label, extra=meta)
