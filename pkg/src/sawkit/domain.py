"""Shared physical types, constants and drive-power calibration.

Units
-----
Every public quantity is SI (Hz, m, s, K, W) except drive power, which is
given in dBm at the device input.  Line attenuation is the caller's business.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np

from .errors import ValidationError

__all__ = [
    "PhysicalConstants",
    "CONSTANTS",
    "DeviceGeometry",
    "ComplexTrace",
    "ResonanceFit",
    "dbm_to_watts",
    "watts_to_dbm",
    "phonon_number",
    "single_phonon_power",
    "fq_product",
]


@dataclass(frozen=True)
class PhysicalConstants:
    """Exact SI (2019) values of h and k_B."""

    h: float = 6.62607015e-34
    k_B: float = 1.380649e-23

    @property
    def hbar(self) -> float:
        return self.h / (2.0 * math.pi)


CONSTANTS = PhysicalConstants()
H = CONSTANTS.h
HBAR = CONSTANTS.hbar
K_B = CONSTANTS.k_B


# SI plausibility windows; a value outside them almost always means
# the caller passed nm, um, mm or km/s by mistake.
_PITCH_RANGE = (1e-9, 1e-3)
_APERTURE_RANGE = (1e-8, 1e-1)
_CAVITY_RANGE = (0.0, 1.0)
_VELOCITY_RANGE = (100.0, 2.0e4)


def _check_range(name: str, value: float, lo: float, hi: float) -> None:
    if not (math.isfinite(value) and lo < value < hi):
        raise ValidationError(
            f"{name}={value!r} outside the SI range ({lo:g}, {hi:g}); "
            "lengths are metres and speeds m/s"
        )


@dataclass(frozen=True)
class DeviceGeometry:
    """Layout of a one-port SAW resonator.

    ``electrode_width_a`` is carried for provenance; no model uses it.
    """

    pitch_p: float
    electrode_width_a: float
    aperture_w: float
    cavity_length_L: float
    mirror_periods_Ng: int
    saw_velocity_v: float
    reflectivity_rs: float

    def __post_init__(self):
        _check_range("pitch_p", self.pitch_p, *_PITCH_RANGE)
        _check_range("aperture_w", self.aperture_w, *_APERTURE_RANGE)
        _check_range("cavity_length_L", self.cavity_length_L, *_CAVITY_RANGE)
        _check_range("saw_velocity_v", self.saw_velocity_v, *_VELOCITY_RANGE)
        if not (0.0 < self.electrode_width_a < self.pitch_p):
            raise ValidationError(
                f"electrode_width_a={self.electrode_width_a!r} must lie in (0, pitch_p)"
            )
        if int(self.mirror_periods_Ng) != self.mirror_periods_Ng or self.mirror_periods_Ng < 0:
            raise ValidationError(
                f"mirror_periods_Ng={self.mirror_periods_Ng!r} must be a non-negative integer"
            )
        if not (0.0 < self.reflectivity_rs < 1.0):
            raise ValidationError(f"reflectivity_rs={self.reflectivity_rs!r} must lie in (0, 1)")
        object.__setattr__(self, "mirror_periods_Ng", int(self.mirror_periods_Ng))

    @property
    def wavelength(self) -> float:
        return 2.0 * self.pitch_p

    def replace(self, **changes) -> "DeviceGeometry":
        from dataclasses import replace

        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "pitch_p": self.pitch_p,
            "electrode_width_a": self.electrode_width_a,
            "aperture_w": self.aperture_w,
            "cavity_length_L": self.cavity_length_L,
            "mirror_periods_Ng": self.mirror_periods_Ng,
            "saw_velocity_v": self.saw_velocity_v,
            "reflectivity_rs": self.reflectivity_rs,
        }


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ComplexTrace:
    """A swept complex reflection measurement.

    ``extra`` holds free-form scalar metadata (pump settings for two-tone
    scans, for instance) and is carried through I/O unchanged.
    """

    frequencies: np.ndarray
    s11: np.ndarray
    drive_power_dbm: float | None = None
    temperature_K: float | None = None
    label: str = ""
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        f = _frozen_array(self.frequencies, float)
        s = _frozen_array(self.s11, complex)
        if f.ndim != 1 or s.ndim != 1 or f.shape != s.shape:
            raise ValidationError(
                f"frequencies and s11 must be 1-D arrays of equal length, got {f.shape} and {s.shape}"
            )
        if f.size < 3:
            raise ValidationError(f"a trace needs at least 3 points, got {f.size}")
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(s)):
            raise ValidationError("trace contains non-finite values")
        if np.any(np.diff(f) <= 0):
            raise ValidationError("frequencies must be strictly increasing")
        if self.temperature_K is not None and not self.temperature_K > 0:
            raise ValidationError(f"temperature_K={self.temperature_K!r} must be positive")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "s11", s)
        object.__setattr__(self, "extra", MappingProxyType(dict(self.extra)))

    def __len__(self) -> int:
        return self.frequencies.size

    @property
    def span(self) -> tuple[float, float]:
        return float(self.frequencies[0]), float(self.frequencies[-1])

    def window(self, f_lo: float, f_hi: float) -> "ComplexTrace":
        mask = (self.frequencies >= f_lo) & (self.frequencies <= f_hi)
        return self.with_data(self.frequencies[mask], self.s11[mask])

    def with_data(self, frequencies, s11) -> "ComplexTrace":
        return ComplexTrace(
            frequencies,
            s11,
            drive_power_dbm=self.drive_power_dbm,
            temperature_K=self.temperature_K,
            label=self.label,
            extra=dict(self.extra),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, ComplexTrace):
            return NotImplemented
        return (
            np.array_equal(self.frequencies, other.frequencies)
            and np.array_equal(self.s11, other.s11)
            and self.drive_power_dbm == other.drive_power_dbm
            and self.temperature_K == other.temperature_K
            and self.label == other.label
            and dict(self.extra) == dict(other.extra)
        )


@dataclass(frozen=True)
class ResonanceFit:
    """Parameters of one fitted mode.

    The circle is reported in the background-normalised frame, where the
    off-resonant point sits at 1 + 0j.
    """

    f0: float
    Q_l: float
    Q_i: float
    Q_c: float
    circle_center: complex
    circle_radius: float
    residual_rms: float
    uncertainties: Mapping[str, float] = field(default_factory=dict)
    label: str = ""
    drive_power_dbm: float | None = None
    temperature_K: float | None = None
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("f0", "Q_l", "Q_i", "Q_c", "circle_radius"):
            value = getattr(self, name)
            if not value > 0:
                raise ValidationError(f"{name}={value!r} must be strictly positive")
        lhs = 1.0 / self.Q_l
        rhs = 1.0 / self.Q_i + 1.0 / self.Q_c
        if abs(lhs - rhs) > 1e-9 * lhs:
            raise ValidationError(
                f"1/Q_l={lhs:.17g} differs from 1/Q_i + 1/Q_c={rhs:.17g} beyond 1e-9 relative"
            )
        object.__setattr__(self, "uncertainties", MappingProxyType(dict(self.uncertainties)))
        object.__setattr__(self, "diagnostics", MappingProxyType(dict(self.diagnostics)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "f0": self.f0,
            "Q_l": self.Q_l,
            "Q_i": self.Q_i,
            "Q_c": self.Q_c,
            "circle_center": [self.circle_center.real, self.circle_center.imag],
            "circle_radius": self.circle_radius,
            "residual_rms": self.residual_rms,
            "uncertainties": dict(self.uncertainties),
            "drive_power_dbm": self.drive_power_dbm,
            "temperature_K": self.temperature_K,
            "diagnostics": dict(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ResonanceFit":
        re, im = d["circle_center"]
        return cls(
            f0=d["f0"],
            Q_l=d["Q_l"],
            Q_i=d["Q_i"],
            Q_c=d["Q_c"],
            circle_center=complex(re, im),
            circle_radius=d["circle_radius"],
            residual_rms=d["residual_rms"],
            uncertainties=d.get("uncertainties", {}),
            label=d.get("label", ""),
            drive_power_dbm=d.get("drive_power_dbm"),
            temperature_K=d.get("temperature_K"),
            diagnostics=d.get("diagnostics", {}),
        )


def dbm_to_watts(p_dbm):
    return 1e-3 * np.power(10.0, np.asarray(p_dbm, dtype=float) / 10.0)


def watts_to_dbm(p_w):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(p_w, dtype=float) / 1e-3)


def _require_positive(**values) -> None:
    for name, v in values.items():
        arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValidationError(f"{name} must be finite and strictly positive, got {v!r}")


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def phonon_number(P_in_dbm, f0, Q_l, Q_c):
    """Mean on-resonance intracavity phonon number.

    n = 4 P Q_l**2 / (hbar w0**2 Q_c) with w0 = 2 pi f0 and P in watts.
    ``P_in_dbm = -inf`` means zero power.  Broadcasts over arrays.
    """
    _require_positive(f0=f0, Q_l=Q_l, Q_c=Q_c)
    p = np.asarray(P_in_dbm, dtype=float)
    if np.any(np.isnan(p)) or np.any(p == np.inf):
        raise ValidationError(f"P_in_dbm must be finite or -inf, got {P_in_dbm!r}")
    w0 = 2.0 * np.pi * np.asarray(f0, dtype=float)
    n = 4.0 * dbm_to_watts(p) * np.asarray(Q_l, float) ** 2 / (HBAR * w0**2 * np.asarray(Q_c, float))
    return _scalar_or_array(n)


def single_phonon_power(f0, Q_l, Q_c):
    """Input power (dBm) that puts one phonon in the mode."""
    _require_positive(f0=f0, Q_l=Q_l, Q_c=Q_c)
    w0 = 2.0 * np.pi * np.asarray(f0, dtype=float)
    p_w = HBAR * w0**2 * np.asarray(Q_c, float) / (4.0 * np.asarray(Q_l, float) ** 2)
    return _scalar_or_array(watts_to_dbm(p_w))


def fq_product(f0, Q_i):
    _require_positive(f0=f0, Q_i=Q_i)
    return _scalar_or_array(np.asarray(f0, float) * np.asarray(Q_i, float))
