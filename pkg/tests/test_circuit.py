import math

import mpmath as mp
import numpy as np
import pytest
from scipy.optimize import brentq

from pvlc import (
    OPEN,
    CODATA,
    CapacitanceModel,
    DiodeParams,
    FrequencyResponse,
    NoConvergence,
    NonConductingDiode,
    NotReached,
    OperatingPoint,
    PvStaticParams,
    SmallSignalModel,
    bandwidth_3db,
    diode_current,
    frequency_response,
    internal_impedance,
    parallel_capacitance,
    parallel_resistance,
    receiver_impedance,
    small_signal_at,
    small_signal_resistance,
    solve_operating_point,
    transfer_bias,
    transfer_conventional,
    transfer_dynamic,
)

# Exact CODATA definitions, kept as strings for arbitrary-precision use.
_Q = "1.602176634e-19"
_KB = "1.380649e-23"


def mp_diode_current(i_0, n, t_k, v):
    """Arbitrary-precision reference for the ideal-diode law."""
    with mp.workdps(60):
        v_t = mp.mpf(_KB) * t_k / mp.mpf(_Q)
        return float(mp.mpf(i_0) * (mp.e ** (mp.mpf(v) / (n * v_t)) - 1))


def mp_operating_point(i_0, n, t_k, r_sh, i_ph, r_l):
    """Arbitrary-precision junction bias from the same current balance."""
    with mp.workdps(60):
        v_t = mp.mpf(_KB) * t_k / mp.mpf(_Q)
        g_l = 0 if math.isinf(r_l) else 1 / mp.mpf(r_l)

        def residual(v):
            return (mp.mpf(i_ph) - mp.mpf(i_0) * (mp.e ** (v / (n * v_t)) - 1)
                    - v / mp.mpf(r_sh) - v * g_l)

        root = mp.findroot(residual, mp.mpf("0.01"))
        return float(root)


def test_codata_constants_fixed():
    assert CODATA.q == 1.602176634e-19
    assert CODATA.k_b == 1.380649e-23
    with pytest.raises(Exception):
        CODATA.q = 1.0  # frozen


def test_thermal_voltage_at_300k():
    d = DiodeParams(i_0=1e-9, n=1.0, t_k=300.0)
    with mp.workdps(40):
        want = float(mp.mpf(_KB) * 300 / mp.mpf(_Q))
    assert d.thermal_voltage == pytest.approx(want, rel=1e-15)
    assert d.thermal_voltage == pytest.approx(0.0258520, rel=1e-6)


def test_diode_current_reference_point():
    d = DiodeParams(i_0=1e-9, n=1.5, t_k=300.0)
    got = diode_current(d, 0.5)
    assert got == pytest.approx(mp_diode_current(1e-9, 1.5, 300.0, 0.5), rel=1e-12)
    # Frozen from the arbitrary-precision oracle above.
    assert got == pytest.approx(3.97880e-4, rel=1e-5)


def test_diode_current_matches_arbitrary_precision():
    rng = np.random.default_rng(20817)
    for _ in range(40):
        i_0 = 10 ** rng.uniform(-12, -6)
        n = rng.uniform(1.0, 3.0)
        t_k = rng.uniform(250.0, 350.0)
        v = rng.uniform(-0.5, 1.2)
        d = DiodeParams(i_0=i_0, n=n, t_k=t_k)
        assert diode_current(d, v) == pytest.approx(
            mp_diode_current(i_0, n, t_k, v), rel=1e-9, abs=1e-300
        )


def test_diode_current_large_bias_stays_finite():
    # exp(v / (n V_T)) alone overflows here; the log-space path must not.
    d = DiodeParams(i_0=1e-30, n=1.0, t_k=300.0)
    v = 18.3  # exponent ~707.9
    assert v / (d.n * d.thermal_voltage) > 700
    got = diode_current(d, v)
    assert math.isfinite(got)
    assert got == pytest.approx(mp_diode_current(1e-30, 1.0, 300.0, v), rel=1e-9)
    # And when even the product overflows, the result saturates to inf.
    assert math.isinf(diode_current(DiodeParams(i_0=1e-9, n=1.0), 60.0))


def test_diode_param_validation():
    with pytest.raises(ValueError):
        DiodeParams(i_0=0.0, n=1.5)
    with pytest.raises(ValueError):
        DiodeParams(i_0=1e-9, n=0.8)
    with pytest.raises(ValueError):
        DiodeParams(i_0=1e-9, n=1.5, t_k=-10.0)


def test_small_signal_resistance_reference_point():
    d = DiodeParams(i_0=1e-9, n=1.5, t_k=300.0)
    i_d = mp_diode_current(1e-9, 1.5, 300.0, 0.5)
    assert small_signal_resistance(d, 0.5) == pytest.approx(
        d.n * d.thermal_voltage / i_d, rel=1e-12
    )
    assert small_signal_resistance(d, 0.5) == pytest.approx(97.46, rel=1e-3)


def test_small_signal_resistance_requires_conduction():
    d = DiodeParams(i_0=1e-9, n=1.5)
    with pytest.raises(NonConductingDiode):
        small_signal_resistance(d, 0.0)
    with pytest.raises(NonConductingDiode):
        small_signal_resistance(d, -0.3)


def test_small_signal_resistance_decreases_with_bias():
    d = DiodeParams(i_0=2e-10, n=1.8)
    grid = np.linspace(0.05, 0.9, 60)
    r = [small_signal_resistance(d, v) for v in grid]
    assert all(a > b for a, b in zip(r, r[1:]))


def test_parallel_resistance_fallback_and_formula():
    d = DiodeParams(i_0=1e-9, n=1.5)
    s = PvStaticParams(r_sh=35e3)
    assert parallel_resistance(d, s, -0.5) == 35e3
    assert parallel_resistance(d, s, 0.0) == 35e3
    r = small_signal_resistance(d, 0.45)
    assert parallel_resistance(d, s, 0.45) == pytest.approx(
        r * 35e3 / (r + 35e3), rel=1e-12
    )


def test_static_param_validation_and_warning():
    with pytest.raises(ValueError):
        PvStaticParams(r_sh=0.0)
    with pytest.raises(ValueError):
        PvStaticParams(r_sh=1e3, r_s=-1.0)
    with pytest.warns(UserWarning):
        PvStaticParams(r_sh=1e3, r_s=50.0)


def test_capacitance_empirical_reference_points():
    # Choose V_c so the model spans 10 nF at zero bias to 90 nF at 5 V.
    v_c = 5.0 / math.log(9.0)
    c = CapacitanceModel.empirical(c_0=10e-9, v_c=v_c)
    assert parallel_capacitance(c, 300.0, 0.0) == pytest.approx(10e-9, rel=1e-12)
    assert parallel_capacitance(c, 300.0, 5.0) == pytest.approx(90e-9, rel=1e-12)
    assert parallel_capacitance(c, 300.0, -1.0) == 10e-9  # clamps to c_rev


def test_capacitance_physical_matches_arbitrary_precision():
    cap = CapacitanceModel.physical(area_m2=1e-4, l_j_m=2e-6, n_0_m3=1e19,
                                    c_rev=1e-12)
    for v in (0.01, 0.1, 0.3, 0.5):
        with mp.workdps(50):
            want = (mp.mpf("1e-4") * mp.mpf(_Q) ** 2 * mp.mpf("2e-6")
                    * mp.mpf("1e19") / (mp.mpf(_KB) * 300)
                    * mp.e ** (mp.mpf(_Q) * v / (mp.mpf(_KB) * 300)))
        assert parallel_capacitance(cap, 300.0, v) == pytest.approx(
            float(want), rel=1e-9
        )
    assert parallel_capacitance(cap, 300.0, -2.0) == 1e-12


def test_capacitance_monotone_non_decreasing():
    rng = np.random.default_rng(404)
    emp = CapacitanceModel.empirical(c_0=8e-9, v_c=2.0, c_rev=3e-9)
    phy = CapacitanceModel.physical(area_m2=1e-4, l_j_m=1e-6, n_0_m3=5e18,
                                    c_rev=1e-13)
    for cap in (emp, phy):
        v = np.sort(rng.uniform(-2.0, 1.0, 80))
        c = [parallel_capacitance(cap, 300.0, x) for x in v]
        assert all(b >= a for a, b in zip(c, c[1:]))


def test_capacitance_validation():
    with pytest.raises(ValueError):
        CapacitanceModel.empirical(c_0=-1e-9, v_c=2.0)
    with pytest.raises(ValueError):
        CapacitanceModel.empirical(c_0=1e-9, v_c=2.0, c_rev=2e-9)  # c_rev > c_0
    with pytest.raises(ValueError):
        CapacitanceModel.physical(area_m2=0.0, l_j_m=1e-6, n_0_m3=1e18, c_rev=1e-12)
    with pytest.raises(ValueError):
        CapacitanceModel(variant="mystery", c_rev=1e-9)


def test_operating_point_reference_case():
    d = DiodeParams(i_0=1e-9, n=1.5, t_k=300.0)
    s = PvStaticParams(r_sh=35e3)
    op = solve_operating_point(d, s, i_ph=1e-4, r_l=800.0)

    def residual(v):
        return 1e-4 - diode_current(d, v) - v / 35e3 - v / 800.0

    v_brentq = brentq(residual, -1.0, 1.0, xtol=1e-15)
    v_mp = mp_operating_point(1e-9, 1.5, 300.0, 35e3, 1e-4, 800.0)
    assert op.v_dc == pytest.approx(v_brentq, abs=1e-9)
    assert op.v_dc == pytest.approx(v_mp, abs=1e-9)
    assert op.v_dc == pytest.approx(0.0782, abs=2e-4)
    assert abs(residual(op.v_dc)) < 1e-12


def test_operating_point_open_circuit_limit():
    d = DiodeParams(i_0=2e-9, n=1.2)
    s = PvStaticParams(r_sh=1e12)  # shunt effectively absent
    op = solve_operating_point(d, s, i_ph=5e-4, r_l=OPEN)
    v_oc = d.n * d.thermal_voltage * math.log1p(5e-4 / 2e-9)
    assert op.v_dc == pytest.approx(v_oc, rel=1e-9)
    assert op.r_l == OPEN


def test_operating_point_loaded_below_open():
    rng = np.random.default_rng(555)
    for _ in range(25):
        d = DiodeParams(i_0=10 ** rng.uniform(-11, -7), n=rng.uniform(1, 3))
        s = PvStaticParams(r_sh=10 ** rng.uniform(3, 6))
        i_ph = 10 ** rng.uniform(-6, -3)
        r_l = 10 ** rng.uniform(1, 4)
        v_open = solve_operating_point(d, s, i_ph, OPEN).v_dc
        v_load = solve_operating_point(d, s, i_ph, r_l).v_dc
        assert 0 <= v_load < v_open


def test_operating_point_zero_photocurrent():
    d = DiodeParams(i_0=1e-9, n=1.5)
    s = PvStaticParams(r_sh=35e3)
    op = solve_operating_point(d, s, i_ph=0.0, r_l=800.0)
    assert abs(op.v_dc) < 1e-9


def test_operating_point_input_validation():
    d = DiodeParams(i_0=1e-9, n=1.5)
    s = PvStaticParams(r_sh=35e3)
    with pytest.raises(ValueError):
        solve_operating_point(d, s, i_ph=-1e-6, r_l=800.0)
    with pytest.raises(ValueError):
        solve_operating_point(d, s, i_ph=1e-4, r_l=0.0)
    with pytest.raises(NoConvergence):
        solve_operating_point(d, s, i_ph=1e-4, r_l=800.0, max_iter=3)


def test_small_signal_trends_with_illumination():
    d = DiodeParams(i_0=1e-9, n=1.5)
    s = PvStaticParams(r_sh=35e3, r_s=10.0)
    cap = CapacitanceModel.empirical(c_0=10e-9, v_c=2.0)
    r_prev, c_prev = math.inf, 0.0
    for i_ph in (1e-5, 3e-5, 1e-4, 3e-4, 1e-3):
        m = small_signal_at(d, s, cap, solve_operating_point(d, s, i_ph, OPEN))
        assert m.r_p < r_prev and m.c_p > c_prev
        assert m.r_s == 10.0
        r_prev, c_prev = m.r_p, m.c_p


def test_tau_n_is_rp_cp_product():
    m = SmallSignalModel(r_p=2500.0, c_p=37.44e-9, r_s=10.0)
    assert m.tau_n == 2500.0 * 37.44e-9
    with pytest.raises(ValueError):
        SmallSignalModel(r_p=-1.0, c_p=1e-9)


def test_internal_impedance_traces_a_semicircle():
    rng = np.random.default_rng(606)
    for _ in range(20):
        m = SmallSignalModel(
            r_p=10 ** rng.uniform(2, 5),
            c_p=10 ** rng.uniform(-9, -6.5),
            r_s=rng.uniform(0, 100),
        )
        f = np.logspace(0, 7, 90)
        z = internal_impedance(m, f)
        center = m.r_s + m.r_p / 2
        assert np.abs(np.abs(z - center) - m.r_p / 2).max() < 1e-9 * m.r_p


def test_internal_impedance_limits_and_apex():
    m = SmallSignalModel(r_p=2500.0, c_p=37.44e-9, r_s=10.0)
    assert internal_impedance(m, 1e-6).real == pytest.approx(2510.0, rel=1e-9)
    assert abs(internal_impedance(m, 1e12) - 10.0) < 1e-3
    # -Im(Z) peaks at the natural frequency 1 / (2 pi tau_n).
    f = np.logspace(2, 6, 4001)
    apex = f[np.argmax(-internal_impedance(m, f).imag)]
    f_n = 1 / (2 * math.pi * m.tau_n)
    assert abs(math.log(apex / f_n)) < math.log(f[1] / f[0]) * 1.5


def test_receiver_impedance_corner_frequency():
    m = SmallSignalModel(r_p=2500.0, c_p=10.5e-9, r_s=10.0)
    f = np.logspace(1, 7, 1200)
    z = receiver_impedance(m, 800.0, f)
    r_eff = 2500.0 * 800.0 / 3300.0
    resp = FrequencyResponse(freq_hz=f, value=np.abs(z - m.r_s),
                             dc_gain=r_eff, power=False)
    got = bandwidth_3db(resp)
    want = 1 / (2 * math.pi * r_eff * 10.5e-9)
    assert got == pytest.approx(want, rel=1e-3)
    assert got == pytest.approx(25e3, rel=2e-2)


def test_receiver_impedance_open_load_equals_internal():
    m = SmallSignalModel(r_p=1.2e3, c_p=22e-9, r_s=47.0)
    f = np.logspace(1, 6, 50)
    assert np.allclose(receiver_impedance(m, OPEN, f), internal_impedance(m, f),
                       rtol=1e-12)


def test_transfer_dynamic_dc_and_literal_form():
    rng = np.random.default_rng(707)
    for _ in range(25):
        m = SmallSignalModel(r_p=10 ** rng.uniform(2, 5),
                             c_p=10 ** rng.uniform(-9, -7))
        r_l = 10 ** rng.uniform(1, 5)
        f = np.logspace(0, 7, 40)
        got = transfer_dynamic(m, r_l, f)
        w = 2 * np.pi * f
        literal = np.abs(r_l / (r_l / m.r_p + 1j * w * r_l * m.c_p + 1)) ** 2
        assert np.allclose(got, literal, rtol=1e-12)
        r_eff = m.r_p * r_l / (m.r_p + r_l)
        assert transfer_dynamic(m, r_l, 0.0) == pytest.approx(r_eff ** 2, rel=1e-12)
    m = SmallSignalModel(r_p=2500.0, c_p=37e-9)
    assert transfer_dynamic(m, OPEN, 0.0) == pytest.approx(2500.0 ** 2, rel=1e-12)


def test_transfer_dynamic_monotone_decreasing():
    m = SmallSignalModel(r_p=2500.0, c_p=37.44e-9)
    f = np.logspace(0, 7, 120)
    h = transfer_dynamic(m, 800.0, f)
    assert np.all(np.diff(h) < 0)


def test_transfer_bias_equals_linearised_route():
    rng = np.random.default_rng(808)
    for _ in range(25):
        d = DiodeParams(i_0=10 ** rng.uniform(-11, -7), n=rng.uniform(1, 3))
        s = PvStaticParams(r_sh=10 ** rng.uniform(3.5, 6))
        cap = CapacitanceModel.empirical(c_0=10 ** rng.uniform(-9, -7.5),
                                         v_c=rng.uniform(1, 4))
        v_dc = rng.uniform(-0.5, 0.8)
        r_l = 10 ** rng.uniform(1.5, 4.5)
        f = np.logspace(0, 7, 30)
        m = SmallSignalModel(r_p=parallel_resistance(d, s, v_dc),
                             c_p=parallel_capacitance(cap, d.t_k, v_dc))
        assert np.allclose(transfer_bias(d, s, cap, v_dc, r_l, f),
                           transfer_dynamic(m, r_l, f), rtol=1e-12)


def test_transfer_bias_reverse_bias_reduction():
    d = DiodeParams(i_0=1e-9, n=1.5)
    s = PvStaticParams(r_sh=35e3)
    cap = CapacitanceModel.empirical(c_0=10e-9, v_c=2.0, c_rev=4e-9)
    f = np.logspace(0, 7, 30)
    got = transfer_bias(d, s, cap, -5.0, 800.0, f)
    w = 2 * np.pi * f
    want = 1 / np.abs(1 / 35e3 + 1 / 800.0 + 1j * w * 4e-9) ** 2
    assert np.allclose(got, want, rtol=1e-12)


def test_conventional_model_reduces_to_dynamic():
    rng = np.random.default_rng(909)
    for _ in range(25):
        d = DiodeParams(i_0=10 ** rng.uniform(-11, -7), n=rng.uniform(1, 3))
        s = PvStaticParams(r_sh=10 ** rng.uniform(3.5, 6))
        cap = CapacitanceModel.empirical(c_0=10 ** rng.uniform(-9, -7.5),
                                         v_c=rng.uniform(1, 4))
        op = OperatingPoint(i_ph=1e-4, v_dc=rng.uniform(0.1, 0.7),
                            r_l=10 ** rng.uniform(1.5, 4.5))
        f = np.logspace(0, 7, 30)
        m = SmallSignalModel(r_p=parallel_resistance(d, s, op.v_dc),
                             c_p=parallel_capacitance(cap, d.t_k, op.v_dc))
        assert np.allclose(transfer_conventional(d, s, cap, op, f),
                           transfer_dynamic(m, op.r_l, f), rtol=1e-9)


def test_conventional_model_series_elements_matter():
    d = DiodeParams(i_0=1e-9, n=1.5)
    s0 = PvStaticParams(r_sh=35e3)
    s1 = PvStaticParams(r_sh=35e3, r_s=10.0, l_wire=1e-6)
    cap = CapacitanceModel.empirical(c_0=10e-9, v_c=2.0)
    op = OperatingPoint(i_ph=1e-4, v_dc=0.3, r_l=800.0)
    f = np.logspace(3, 7, 40)
    h0 = transfer_conventional(d, s0, cap, op, f)
    h1 = transfer_conventional(d, s1, cap, op, f)
    assert not np.allclose(h0, h1, rtol=1e-3)
    # DC value is untouched by the lead inductance.
    assert transfer_conventional(d, s1, cap, op, [0.0])[0] == pytest.approx(
        transfer_conventional(d, PvStaticParams(r_sh=35e3, r_s=10.0), cap, op,
                              [0.0])[0], rel=1e-12)
    with pytest.raises(ValueError):
        transfer_conventional(d, s0, cap, OperatingPoint(1e-4, 0.3, OPEN), f)


def test_bandwidth_analytic_agrees_with_sampled():
    rng = np.random.default_rng(111)
    for _ in range(20):
        m = SmallSignalModel(r_p=10 ** rng.uniform(2, 4.5),
                             c_p=10 ** rng.uniform(-9, -7))
        r_l = 10 ** rng.uniform(1.5, 4.5)
        f = np.logspace(0, 8, 400)
        resp = frequency_response(m, r_l, f)
        # bandwidth_3db itself enforces pole/sample agreement within one step.
        got = bandwidth_3db(resp)
        r_eff = m.r_p * r_l / (m.r_p + r_l)
        assert got == pytest.approx(1 / (2 * math.pi * r_eff * m.c_p), rel=1e-12)


def test_bandwidth_not_reached():
    m = SmallSignalModel(r_p=2500.0, c_p=37.44e-9)
    f = np.logspace(0, 2, 50)  # grid stops well below the ~2.4 kHz corner
    with pytest.raises(NotReached):
        bandwidth_3db(frequency_response(m, OPEN, f))
    f_hi = np.logspace(5, 7, 50)  # grid starts above the corner
    with pytest.raises(NotReached):
        bandwidth_3db(frequency_response(m, OPEN, f_hi))


def test_bandwidth_rejects_inconsistent_pole():
    f = np.logspace(0, 6, 200)
    value = 1.0 / (1.0 + (f / 1e3) ** 2)
    resp = FrequencyResponse(freq_hz=f, value=value, dc_gain=1.0, power=True,
                             pole_hz=5e4)
    with pytest.raises(ValueError):
        bandwidth_3db(resp)


def test_frequency_response_validation():
    with pytest.raises(ValueError):
        FrequencyResponse(freq_hz=np.array([1.0, 2.0]), value=np.array([1.0]),
                          dc_gain=1.0)
    with pytest.raises(ValueError):
        FrequencyResponse(freq_hz=np.array([2.0, 1.0]),
                          value=np.array([1.0, 1.0]), dc_gain=1.0)


def test_operating_point_record_fields():
    op = OperatingPoint(i_ph=1e-4, v_dc=0.078, r_l=800.0, e_lux=200.0)
    assert op.e_lux == 200.0
    assert OperatingPoint(i_ph=0.0, v_dc=0.0).r_l == OPEN
