import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import goldens
from conftest import reference_geometry
from sawkit.domain import (
    CONSTANTS,
    ComplexTrace,
    DeviceGeometry,
    ResonanceFit,
    dbm_to_watts,
    fq_product,
    phonon_number,
    single_phonon_power,
    watts_to_dbm,
)
from sawkit.errors import ValidationError


def test_constants_are_exact_si():
    assert CONSTANTS.h == 6.62607015e-34
    assert CONSTANTS.k_B == 1.380649e-23
    assert CONSTANTS.hbar == pytest.approx(1.054571817e-34, rel=1e-9)


class TestGeometry:
    def test_valid(self, geometry):
        assert geometry.wavelength == pytest.approx(1e-6)
        assert geometry.replace(cavity_length_L=2e-4).cavity_length_L == 2e-4
        assert DeviceGeometry(**geometry.to_dict()) == geometry

    @pytest.mark.parametrize(
        "changes",
        [
            {"electrode_width_a": 0.6e-6},
            {"electrode_width_a": 0.0},
            {"reflectivity_rs": 0.0},
            {"reflectivity_rs": 1.0},
            {"mirror_periods_Ng": -1},
            {"mirror_periods_Ng": 2.5},
            {"cavity_length_L": -1e-6},
            {"aperture_w": 0.0},
        ],
    )
    def test_invariants(self, changes):
        with pytest.raises(ValidationError):
            reference_geometry(**changes)

    @settings(max_examples=40, deadline=None)
    @given(
        st.sampled_from(
            [
                ("pitch_p", 500.0),  # nm given as m
                ("pitch_p", 0.5),  # um
                ("aperture_w", 30.0),  # um
                ("cavity_length_L", 100.0),  # um
                ("saw_velocity_v", 5.6),  # km/s
            ]
        ),
        st.floats(0.5, 2.0),
    )
    def test_hand_units_rejected(self, field_value, factor):
        name, value = field_value
        with pytest.raises(ValidationError):
            reference_geometry(**{name: value * factor})


class TestTrace:
    def test_invariants(self):
        f = np.array([1.0, 2.0, 3.0])
        t = ComplexTrace(f, np.ones(3), temperature_K=0.01, extra={"k": 1})
        assert len(t) == 3 and t.span == (1.0, 3.0)
        with pytest.raises(ValueError):
            t.s11[0] = 0.0
        with pytest.raises(ValidationError):
            ComplexTrace(f[:2], np.ones(2))
        with pytest.raises(ValidationError):
            ComplexTrace(f, np.ones(4))
        with pytest.raises(ValidationError):
            ComplexTrace(np.array([1.0, 3.0, 2.0]), np.ones(3))
        with pytest.raises(ValidationError):
            ComplexTrace(f, np.ones(3), temperature_K=0.0)
        with pytest.raises(ValidationError):
            ComplexTrace(f, np.array([1, np.nan, 1]))

    def test_window_keeps_metadata(self):
        f = np.linspace(0, 9, 10)
        t = ComplexTrace(f, f + 1j, drive_power_dbm=-100.0, label="x", extra={"a": 2})
        w = t.window(2, 6)
        assert len(w) == 5 and w.drive_power_dbm == -100.0 and dict(w.extra) == {"a": 2}


class TestResonanceFit:
    def _fit(self, **kw):
        base = dict(f0=5e9, Q_l=2.5e4, Q_i=5e4, Q_c=5e4, circle_center=0.5 + 0j, circle_radius=0.5, residual_rms=0.0)
        base.update(kw)
        return ResonanceFit(**base)

    def test_identity_enforced(self):
        self._fit()
        with pytest.raises(ValidationError):
            self._fit(Q_l=2.6e4)
        with pytest.raises(ValidationError):
            self._fit(circle_radius=0.0)

    def test_dict_round_trip(self):
        fit = self._fit(uncertainties={"Q_i": 10.0}, diagnostics={"coupling": "under"})
        assert ResonanceFit.from_dict(fit.to_dict()) == fit

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e2, 1e8), st.floats(1e2, 1e8))
    def test_identity_holds_for_constructed(self, qi, qc):
        ql = 1.0 / (1.0 / qi + 1.0 / qc)
        fit = self._fit(Q_l=ql, Q_i=qi, Q_c=qc)
        assert abs(1 / fit.Q_l - (1 / fit.Q_i + 1 / fit.Q_c)) <= 1e-9 / fit.Q_l


class TestPhononNumber:
    def test_golden(self):
        assert phonon_number(-141.0, 5.6e9, 2e4, 4e4) == pytest.approx(goldens.NBAR_M141, rel=1e-12)

    def test_zero_power(self):
        assert phonon_number(-math.inf, 5.6e9, 2e4, 4e4) == 0.0

    def test_doubling(self):
        n1 = phonon_number(-120.0, 5.6e9, 2e4, 4e4)
        n2 = phonon_number(-120.0 + 10 * math.log10(2), 5.6e9, 2e4, 4e4)
        assert n2 / n1 == pytest.approx(2.0, rel=1e-12)

    @pytest.mark.parametrize("bad", [dict(f0=0.0), dict(Q_l=-1.0), dict(Q_c=0.0)])
    def test_domain_errors(self, bad):
        args = dict(P_in_dbm=-141.0, f0=5.6e9, Q_l=2e4, Q_c=4e4)
        args.update(bad)
        with pytest.raises(ValidationError):
            phonon_number(**args)

    def test_broadcasts(self):
        n = phonon_number(np.array([-150.0, -140.0]), 5.6e9, 2e4, 4e4)
        assert n.shape == (2,) and n[1] / n[0] == pytest.approx(10.0)

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(-170, -60),
        st.floats(1e8, 1e10),
        st.floats(1e3, 1e6),
        st.floats(1e3, 1e6),
        st.floats(0.01, 3.0),
    )
    def test_monotonicity(self, p, f0, ql, qc, step):
        n = phonon_number(p, f0, ql, qc)
        assert phonon_number(p + step, f0, ql, qc) > n
        assert phonon_number(p, f0, ql * (1 + step), qc) > n
        assert phonon_number(p, f0 * (1 + step), ql, qc) < n
        assert phonon_number(p, f0, ql, qc * (1 + step)) < n


class TestSinglePhononPower:
    def test_golden(self):
        assert single_phonon_power(5.6e9, 2e4, 4e4) == pytest.approx(goldens.P_SINGLE_PHONON, abs=1e-10)

    def test_window_and_inverse(self):
        p1 = single_phonon_power(5.6e9, 2e4, 4e4)
        assert -146.0 <= p1 <= -144.0
        assert phonon_number(p1, 5.6e9, 2e4, 4e4) == pytest.approx(1.0, rel=1e-12)

    def test_quadrupling_ql(self):
        # n ~ Q_l**2, so 4x Q_l drops the power by 20 log10(4) = 12.04 dB
        d = single_phonon_power(5.6e9, 2e4, 4e4) - single_phonon_power(5.6e9, 8e4, 4e4)
        assert d == pytest.approx(20 * math.log10(4), abs=1e-9)


def test_dbm_round_trip():
    assert dbm_to_watts(0.0) == pytest.approx(1e-3)
    assert watts_to_dbm(dbm_to_watts(-141.0)) == pytest.approx(-141.0, abs=1e-12)


class TestFq:
    def test_reference_value(self):
        assert fq_product(5.62e9, 5e4) == 2.81e14

    def test_identity_and_measured_mode(self):
        assert fq_product(1.0, 1.0) == 1.0
        assert fq_product(5.5976e9, 4.74e4) == pytest.approx(2.653e14, rel=1e-3)
