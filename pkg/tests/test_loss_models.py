import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import goldens
from conftest import F0
from sawkit.errors import IdentifiabilityError, ModelTensionWarning, ValidationError
from sawkit.loss_models import (
    TlsLossParams,
    critical_phonon_number,
    fit_frequency_shift,
    fit_power_sweep,
    fit_temperature_sweep,
    freq_shift_temperature,
    qi_power_model,
    thermal_factor,
)

TRUTH = TlsLossParams(Q_TLS=2.23e5, Q_rl=4.74e4, n_c=5.0, beta=1.0, f0=F0)
N = np.logspace(-1, 6, 20)


class TestParams:
    @pytest.mark.parametrize(
        "bad", [dict(Q_TLS=0.0), dict(Q_rl=-1.0), dict(n_c=math.inf), dict(beta=0.0), dict(beta=2.5), dict(mu=-1.0)]
    )
    def test_validation(self, bad):
        with pytest.raises(ValidationError):
            TRUTH.replace(**bad)

    def test_round_trip(self):
        assert TlsLossParams.from_dict(TRUTH.to_dict()) == TRUTH


class TestPowerModel:
    def test_thermal_factor_golden(self):
        assert thermal_factor(F0, 0.01) == pytest.approx(math.tanh(goldens.X_10MK), rel=1e-15)
        # argument check away from saturation
        assert thermal_factor(F0, 1.0) == pytest.approx(math.tanh(goldens.X_10MK / 100), rel=1e-13)

    def test_low_power_limit(self):
        assert qi_power_model(0.0, 0.01, TRUTH) == pytest.approx(goldens.QI_LOW_POWER, rel=1e-13)

    def test_high_power_limit(self):
        assert qi_power_model(1e14, 0.01, TRUTH) == pytest.approx(TRUTH.Q_rl, rel=1e-6)

    def test_hot_limit(self):
        # thermally saturated TLS no longer absorb
        assert qi_power_model(0.0, 50.0, TRUTH) == pytest.approx(TRUTH.Q_rl, rel=1e-3)

    def test_half_saturation(self):
        inv = 1 / qi_power_model(TRUTH.n_c, 0.01, TRUTH) - 1 / TRUTH.Q_rl
        inv0 = 1 / qi_power_model(0.0, 0.01, TRUTH) - 1 / TRUTH.Q_rl
        assert inv / inv0 == pytest.approx(1 / math.sqrt(2), rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1e8), st.floats(1.01, 100), st.floats(0.1, 2.0))
    def test_monotone_in_n(self, n, k, beta):
        p = TRUTH.replace(beta=beta)
        assert qi_power_model(n * k + 1e-9, 0.01, p) >= qi_power_model(n, 0.01, p)

    def test_thermal_factor_limits(self):
        assert thermal_factor(F0, 1e-4) == 1.0
        # small-argument series tanh x = x - x^3/3 + 2x^5/15
        for T in (5.0, 20.0, 100.0):
            x = goldens.X_10MK * 0.01 / T
            assert thermal_factor(F0, T) == pytest.approx(x - x**3 / 3 + 2 * x**5 / 15, rel=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1e9), st.floats(1e-3, 5.0), st.floats(0.1, 2.0))
    def test_bounded_by_q_rl(self, n, T, beta):
        assert qi_power_model(n, T, TRUTH.replace(beta=beta)) <= TRUTH.Q_rl

    def test_low_temperature_dip_needs_mu(self):
        # with n_c rising in T, Q_i(T) at fixed n first falls then recovers
        T = np.geomspace(0.01, 1.0, 400)
        for n in (1e1, 1e3, 1e5):
            flat = qi_power_model(n, T, TRUTH)
            assert np.all(np.diff(flat) >= 0)
            dipped = qi_power_model(n, T, TRUTH.replace(mu=1.5))
            k = int(np.argmin(dipped))
            assert 0 < k < T.size - 1

    def test_temperature_dependent_nc(self):
        p = TRUTH.replace(mu=1.5)
        assert critical_phonon_number(0.04, p) == pytest.approx(5.0 * 4**1.5)
        np.testing.assert_allclose(critical_phonon_number([0.01, 0.02], TRUTH), 5.0)

    def test_broadcast_and_domain(self):
        q = qi_power_model(N[:, None], np.array([0.01, 0.1])[None, :], TRUTH)
        assert q.shape == (20, 2)
        with pytest.raises(ValidationError):
            qi_power_model(-1.0, 0.01, TRUTH)
        with pytest.raises(ValidationError):
            qi_power_model(1.0, 0.0, TRUTH)


class TestShiftModel:
    def test_golden(self):
        assert freq_shift_temperature(0.2, F0, 2.23e5) == pytest.approx(goldens.EQ2_T200MK, rel=1e-12)

    def test_vanishes_cold(self):
        assert abs(freq_shift_temperature(1e-3, F0, 2.23e5)) < 1e-10

    def test_reference_subtraction(self):
        a = freq_shift_temperature(0.2, F0, 2.23e5, reference_temperature=0.01)
        b = freq_shift_temperature(0.2, F0, 2.23e5) - freq_shift_temperature(0.01, F0, 2.23e5)
        assert a == pytest.approx(b, rel=1e-14)
        assert freq_shift_temperature(0.05, F0, 2.23e5, reference_temperature=0.05) == 0.0

    def test_single_interior_extremum(self):
        T = np.geomspace(0.01, 1.0, 20001)
        y = freq_shift_temperature(T, 5.6e9, 2.23e5)
        d = np.sign(np.diff(y))
        d = d[d != 0]
        assert np.count_nonzero(d[1:] != d[:-1]) == 1

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.005, 2.0), st.floats(1e3, 1e7))
    def test_inverse_scaling(self, T, q):
        assert freq_shift_temperature(T, F0, q) * q == pytest.approx(freq_shift_temperature(T, F0, 1.0), rel=1e-12)


class TestPowerFit:
    def test_noiseless_exact(self):
        fit = fit_power_sweep(N, qi_power_model(N, 0.01, TRUTH), 0.01, F0)
        for name in ("Q_TLS", "Q_rl", "n_c", "beta"):
            assert getattr(fit.params, name) == pytest.approx(getattr(TRUTH, name), rel=1e-6)
        assert fit.residual_rms["qi"] < 1e-9

    def test_low_noise_recovery(self):
        rng = np.random.default_rng(1)
        qi = qi_power_model(N, 0.01, TRUTH) * np.exp(0.002 * rng.normal(size=N.size))
        fit = fit_power_sweep(N, qi, 0.01, F0)
        assert fit.params.Q_rl == pytest.approx(TRUTH.Q_rl, rel=0.01)
        assert fit.params.Q_TLS == pytest.approx(TRUTH.Q_TLS, rel=0.05)
        assert fit.uncertainties["Q_TLS"] > 0

    def test_explicit_initial(self):
        fit = fit_power_sweep(N, qi_power_model(N, 0.01, TRUTH), 0.01, F0, initial=TRUTH.to_dict())
        assert fit.params.n_c == pytest.approx(5.0, rel=1e-6)

    def test_too_few_decades(self):
        n = np.linspace(1, 10, 10)
        with pytest.raises(IdentifiabilityError) as exc:
            fit_power_sweep(n, qi_power_model(n, 0.01, TRUTH), 0.01, F0)
        assert set(exc.value.parameters) == {"n_c", "beta"}

    def test_bound_hit(self):
        # flat data: no TLS signal, so the saturation parameters run to a bound
        with pytest.raises(IdentifiabilityError):
            fit_power_sweep(N, np.full(N.size, 4.74e4), 0.01, F0)

    def test_input_validation(self):
        with pytest.raises(ValidationError):
            fit_power_sweep(N[:4], np.ones(4), 0.01, F0)
        with pytest.raises(ValidationError):
            fit_power_sweep(N, np.ones(N.size - 1), 0.01, F0)
        with pytest.raises(ValidationError):
            fit_power_sweep(N, -np.ones(N.size), 0.01, F0)


def _temperature_data(p, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    T = np.geomspace(0.01, 0.5, 12)
    n = np.array([0.1, 1e1, 1e3, 1e5])
    TT, NN = np.meshgrid(T, n, indexing="ij")
    qi = qi_power_model(NN.ravel(), TT.ravel(), p) * np.exp(noise * rng.normal(size=TT.size))
    df = F0 * freq_shift_temperature(T, F0, p.Q_TLS, reference_temperature=0.01)
    df = df + noise * np.max(np.abs(df)) * rng.normal(size=T.size)
    return np.column_stack([TT.ravel(), NN.ravel(), qi]), np.column_stack([T, df])


class TestTemperatureFit:
    def test_shift_only(self):
        T = np.geomspace(0.01, 1.0, 15)
        df = F0 * freq_shift_temperature(T, F0, 2.23e5)
        fit = fit_frequency_shift(T, df, F0)
        assert fit.params.Q_TLS == pytest.approx(2.23e5, rel=1e-9)
        assert fit.free == ("Q_TLS",)

    def test_shift_only_noisy(self):
        T = np.geomspace(0.01, 1.0, 15)
        clean = F0 * freq_shift_temperature(T, F0, 2.23e5)
        errs = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            fit = fit_frequency_shift(T, clean * (1 + 0.03 * rng.standard_normal(T.size)), F0)
            errs.append(abs(fit.params.Q_TLS / 2.23e5 - 1))
        assert np.median(errs) < 0.05

    def test_shift_wrong_sign(self):
        T = np.geomspace(0.01, 1.0, 15)
        with pytest.raises(IdentifiabilityError):
            fit_frequency_shift(T, -F0 * freq_shift_temperature(T, F0, 2.23e5), F0)

    def test_shift_needs_temperatures(self):
        with pytest.raises(ValidationError):
            fit_frequency_shift([0.01, 0.02], [0.0, 1.0], F0)

    def test_joint_noiseless(self):
        p = TRUTH.replace(mu=1.0)
        qd, sd = _temperature_data(p)
        fit = fit_temperature_sweep(qd, sd, F0, reference_temperature=0.01)
        for name in ("Q_TLS", "Q_rl", "n_c", "beta", "mu"):
            assert getattr(fit.params, name) == pytest.approx(getattr(p, name), rel=1e-4)
        assert "model_tension" not in fit.flags

    def test_joint_noisy(self):
        p = TRUTH.replace(mu=1.0)
        qd, sd = _temperature_data(p, noise=0.005, seed=4)
        fit = fit_temperature_sweep(qd, sd, F0, reference_temperature=0.01)
        assert fit.params.Q_TLS == pytest.approx(p.Q_TLS, rel=0.05)
        assert fit.params.Q_rl == pytest.approx(p.Q_rl, rel=0.01)

    def test_mu_recovered_at_3_percent(self):
        p = TRUTH.replace(mu=1.5)
        errs = []
        for seed in range(40):
            qd, sd = _temperature_data(p, noise=0.03, seed=seed)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    fit = fit_temperature_sweep(qd, sd, F0, reference_temperature=0.01)
            except IdentifiabilityError:
                errs.append(math.inf)
                continue
            errs.append(abs(fit.params.mu / 1.5 - 1))
        assert np.median(errs) < 0.15

    def test_tension_warning(self):
        p = TRUTH.replace(mu=1.0)
        qd, _ = _temperature_data(p)
        _, sd = _temperature_data(p.replace(Q_TLS=p.Q_TLS / 1.5))
        rng = np.random.default_rng(0)
        qd[:, 2] *= np.exp(1e-3 * rng.normal(size=qd.shape[0]))
        sd[:, 1] += 1e-3 * np.max(np.abs(sd[:, 1])) * rng.normal(size=sd.shape[0])
        with pytest.warns(ModelTensionWarning):
            fit = fit_temperature_sweep(qd, sd, F0, reference_temperature=0.01)
        assert "model_tension" in fit.flags
        assert fit.alternatives["Q_TLS_shift_only"] == pytest.approx(p.Q_TLS / 1.5, rel=0.01)
        assert fit.alternatives["Q_TLS_loss_only"] == pytest.approx(p.Q_TLS, rel=0.01)

    def test_shape_validation(self):
        with pytest.raises(ValidationError):
            fit_temperature_sweep(np.ones((5, 2)), np.ones((5, 2)), F0)
        with pytest.raises(ValidationError):
            fit_temperature_sweep(np.ones((5, 3)), np.ones((5, 3)), F0)


def test_fit_dict_is_plain():
    fit = fit_power_sweep(N, qi_power_model(N, 0.01, TRUTH), 0.01, F0)
    d = fit.to_dict()
    assert set(d["params"]) == {"Q_TLS", "Q_rl", "n_c", "beta", "f0", "T_ref", "mu"}
    assert d["free"] == ["Q_TLS", "Q_rl", "n_c", "beta"]
    assert fit.relative_uncertainty("Q_rl") >= 0
