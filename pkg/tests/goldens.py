"""Constants frozen from ``tests/oracles/generate_goldens.py`` (mpmath, 50 digits).

They were computed before the implementation existed and are compared
against it, never regenerated from it.
"""

# phonon number at -141 dBm, 5.6 GHz, Q_l = 2e4, Q_c = 4e4
NBAR_M141 = 2.4335935156457196728
# power giving one phonon at 5.6 GHz, Q_l = 2e4, Q_c = 4e4 (dBm)
P_SINGLE_PHONON = -144.86248039524901806

# resonant TLS shift at T = 0.2 K, f0 = 5.5976 GHz, Q_TLS = 2.23e5
EQ2_T200MK = -1.326765525246843859899181e-7
# Re psi(1/2 + 1000 i) - ln 1000
DIGAMMA_ASYMPTOTIC_1000 = -4.1666673958337177583e-8

DIGAMMA_VALUES = {
    complex(1.0, 0.0): complex(-0.5772156649015328606065121, 0.0),
    complex(0.5, 0.0): complex(-1.963510026021423479440976, 0.0),
    complex(0.5, -4.2): complex(1.4326982878445023128, -1.57079632678402264),
    complex(0.5, -0.01): complex(-1.9626689075088066818, -0.049331793563643042873),
    complex(2.5, 3.0): complex(1.2812739190662314271, 0.97980531534455963762),
    complex(-3.7, 0.2): complex(0.085426161316683453841, 2.2496477386055162152),
    complex(0.1, 0.0): complex(-10.423754940411076795, 0.0),
    complex(12.0, -30.0): complex(3.4697180597139580916, -1.2047128225175439186),
}

TANH_450 = 0.9999834124992522168  # tanh(0.013 * 450)
TANH_500 = 0.99999547935140419285  # tanh(0.013 * 500)

# h f0 / 2 k_B T at 10 mK, f0 = 5.5976 GHz, and Q_i(n = 0) with Q_TLS = 2.23e5, Q_rl = 4.74e4
X_10MK = 13.432121513737380029
QI_LOW_POWER = 39090.976331390451069

# cavity lengths giving FSR 34.42 MHz and 3.03 MHz (f0 = 5.66 GHz, p = 0.5 um, |r_s| = 0.013)
L_FSR_34_42 = 4.3758101282796227596e-5
L_FSR_3_03 = 8.9553186087839553186e-4
STOPBAND_HALF_WIDTH = 23421241.425403317612
MODES_AT_3_03 = 15

# nc_eff for Omega0 = 40 kHz, T1 = 1.25 us, T2 = 2.5 us
NC_EFF_40K = 5.0660591821168885722
