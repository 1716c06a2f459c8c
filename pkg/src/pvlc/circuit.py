"""Small-signal circuit model of a photovoltaic cell used as a photodetector.

The receiver is modelled as a photocurrent source in parallel with the cell
diode, a shunt resistance and a bias-dependent junction capacitance, feeding
a load through a small series resistance.  All operating-point dependent
quantities (diode dynamic resistance, junction capacitance) are derived from
the DC bias that the photocurrent establishes across the junction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import e as _CODATA_Q, k as _CODATA_KB

__all__ = [
    "OPEN",
    "PhysicalConstants",
    "CODATA",
    "DiodeParams",
    "PvStaticParams",
    "CapacitanceModel",
    "OperatingPoint",
    "SmallSignalModel",
    "FrequencyResponse",
    "NonConductingDiode",
    "NoConvergence",
    "NotReached",
    "diode_current",
    "small_signal_resistance",
    "parallel_resistance",
    "parallel_capacitance",
    "solve_operating_point",
    "small_signal_at",
    "internal_impedance",
    "receiver_impedance",
    "transfer_dynamic",
    "transfer_bias",
    "transfer_conventional",
    "frequency_response",
    "bandwidth_3db",
]

# Load value representing an unterminated (open-circuit) receiver.
OPEN = math.inf


class NonConductingDiode(ValueError):
    """Diode carries no forward current, so its dynamic resistance is undefined."""


class NoConvergence(RuntimeError):
    """Iterative solver exhausted its budget without meeting tolerance."""


class NotReached(RuntimeError):
    """A sampled curve never crosses the level being searched for."""


@dataclass(frozen=True)
class PhysicalConstants:
    """Fixed CODATA constants; not user-settable."""

    q: float = field(default=_CODATA_Q, init=False)
    k_b: float = field(default=_CODATA_KB, init=False)


CODATA = PhysicalConstants()


@dataclass(frozen=True)
class DiodeParams:
    """Ideal-diode law parameters: saturation current, ideality, temperature."""

    i_0: float
    n: float
    t_k: float = 300.0

    def __post_init__(self):
        if self.i_0 <= 0:
            raise ValueError(f"saturation current must be positive, got {self.i_0}")
        if self.n < 1:
            raise ValueError(f"ideality factor must be >= 1, got {self.n}")
        if self.t_k <= 0:
            raise ValueError(f"temperature must be positive, got {self.t_k}")

    @property
    def thermal_voltage(self) -> float:
        return CODATA.k_b * self.t_k / CODATA.q


@dataclass(frozen=True)
class PvStaticParams:
    """Bias-independent parasitics: shunt, series resistance, lead inductance."""

    r_sh: float
    r_s: float = 0.0
    l_wire: float = 0.0

    def __post_init__(self):
        if self.r_sh <= 0:
            raise ValueError(f"shunt resistance must be positive, got {self.r_sh}")
        if self.r_s < 0 or self.l_wire < 0:
            raise ValueError("series resistance and lead inductance must be >= 0")
        if self.r_s > self.r_sh / 100:
            warnings.warn(
                "series resistance within 1% of shunt resistance; "
                "the parallel/series separation of the model is dubious here",
                stacklevel=2,
            )


@dataclass(frozen=True)
class CapacitanceModel:
    """Bias-dependent junction capacitance.

    Two variants: "physical" computes the forward-bias diffusion capacitance
    from area, junction depth and equilibrium carrier density; "empirical"
    uses a fitted exponential C_0 * exp(V / V_c).  Both clamp to a constant
    reverse/depletion value c_rev for V <= 0.
    """

    variant: str
    c_rev: float
    c_0: float = 0.0
    v_c: float = 0.0
    area_m2: float = 0.0
    l_j_m: float = 0.0
    n_0_m3: float = 0.0

    def __post_init__(self):
        if self.c_rev <= 0:
            raise ValueError(f"reverse capacitance must be positive, got {self.c_rev}")
        if self.variant == "empirical":
            if self.c_0 <= 0 or self.v_c <= 0:
                raise ValueError("empirical variant needs c_0 > 0 and v_c > 0")
            if self.c_rev > self.c_0 * (1 + 1e-12):
                raise ValueError(
                    "c_rev exceeds forward capacitance at V=0+; "
                    "capacitance would be non-monotonic across zero bias"
                )
        elif self.variant == "physical":
            if self.area_m2 <= 0 or self.l_j_m <= 0 or self.n_0_m3 <= 0:
                raise ValueError("physical variant needs area, l_j and n_0 all > 0")
        else:
            raise ValueError(f"unknown capacitance variant {self.variant!r}")

    @classmethod
    def empirical(cls, c_0: float, v_c: float, c_rev: float | None = None):
        return cls(variant="empirical", c_rev=c_0 if c_rev is None else c_rev,
                   c_0=c_0, v_c=v_c)

    @classmethod
    def physical(cls, area_m2: float, l_j_m: float, n_0_m3: float, c_rev: float):
        return cls(variant="physical", c_rev=c_rev, area_m2=area_m2,
                   l_j_m=l_j_m, n_0_m3=n_0_m3)


@dataclass(frozen=True)
class OperatingPoint:
    """DC solution of the illuminated cell: photocurrent, junction bias, load."""

    i_ph: float
    v_dc: float
    r_l: float = OPEN
    e_lux: float | None = None


@dataclass(frozen=True)
class SmallSignalModel:
    """Linearised receiver at one operating point."""

    r_p: float
    c_p: float
    r_s: float = 0.0

    def __post_init__(self):
        if self.r_p <= 0 or self.c_p <= 0:
            raise ValueError("r_p and c_p must be positive")
        if self.r_s < 0:
            raise ValueError("r_s must be >= 0")

    @property
    def tau_n(self) -> float:
        """Natural time constant R_P * C_P of the unloaded receiver."""
        return self.r_p * self.c_p


@dataclass
class FrequencyResponse:
    """Sampled frequency response with optional analytic pole annotation.

    ``power`` tells whether ``value`` is a squared magnitude; ``pole_hz`` is
    set when the producing model is a single pole, so the 3 dB readout can
    use the analytic corner instead of interpolating samples.
    """

    freq_hz: np.ndarray
    value: np.ndarray
    dc_gain: float
    power: bool = True
    pole_hz: float | None = None

    def __post_init__(self):
        self.freq_hz = np.asarray(self.freq_hz, dtype=float)
        self.value = np.asarray(self.value, dtype=float)
        if self.freq_hz.shape != self.value.shape:
            raise ValueError("frequency and value arrays must have the same shape")
        if self.freq_hz.ndim != 1 or self.freq_hz.size < 2:
            raise ValueError("need a 1-D response with at least two samples")
        if np.any(np.diff(self.freq_hz) <= 0):
            raise ValueError("frequencies must be strictly increasing")


def diode_current(diode: DiodeParams, v: float) -> float:
    """Ideal-diode law I_0 * (exp(V / (n V_T)) - 1).

    For large forward bias the exponential is evaluated in log space so the
    result stays finite as long as the product I_0 * exp(...) is representable.
    """
    x = v / (diode.n * diode.thermal_voltage)
    if x > 700.0:
        # exp(x) alone would overflow; fold I_0 into the exponent first.
        y = x + math.log(diode.i_0)
        return math.exp(y) - diode.i_0 if y <= 709.0 else math.inf
    return diode.i_0 * math.expm1(x)


def small_signal_resistance(diode: DiodeParams, v: float) -> float:
    """Dynamic resistance n V_T / I_D of the forward-conducting diode."""
    i_d = diode_current(diode, v)
    if i_d <= 0:
        raise NonConductingDiode(
            f"diode current {i_d:.3g} A at V={v:.3g} V; dynamic resistance undefined"
        )
    return diode.n * diode.thermal_voltage / i_d


def parallel_resistance(diode: DiodeParams, static: PvStaticParams, v: float) -> float:
    """Diode dynamic resistance in parallel with the shunt; R_SH when cut off."""
    try:
        r = small_signal_resistance(diode, v)
    except NonConductingDiode:
        return static.r_sh
    return r * static.r_sh / (r + static.r_sh)


def parallel_capacitance(cap: CapacitanceModel, t_k: float, v: float) -> float:
    """Junction capacitance at bias v; constant c_rev at or below zero bias."""
    if v <= 0:
        return cap.c_rev
    if cap.variant == "empirical":
        x = v / cap.v_c
    else:
        x = CODATA.q * v / (CODATA.k_b * t_k)
    if x > 700.0:
        return math.inf
    scale = (cap.c_0 if cap.variant == "empirical"
             else cap.area_m2 * CODATA.q ** 2 * cap.l_j_m * cap.n_0_m3
             / (CODATA.k_b * t_k))
    return scale * math.exp(x)


def _kcl_residual(diode: DiodeParams, static: PvStaticParams,
                  i_ph: float, r_l: float, v: float) -> float:
    # Current balance at the junction node; strictly decreasing in v.
    load = 0.0 if math.isinf(r_l) else v / r_l
    return i_ph - diode_current(diode, v) - v / static.r_sh - load


def solve_operating_point(diode: DiodeParams, static: PvStaticParams,
                          i_ph: float, r_l: float = OPEN,
                          e_lux: float | None = None,
                          max_iter: int = 200) -> OperatingPoint:
    """DC junction bias from photocurrent balance, by bisection.

    The residual i_ph - I_D(v) - v/R_SH - v/R_L is strictly decreasing in v,
    so the root is unique.  Bisection runs on [-1 V, V_oc-bound] until the
    residual magnitude drops below 1e-12 A.
    """
    if i_ph < 0:
        raise ValueError(f"photocurrent must be >= 0, got {i_ph}")
    if r_l <= 0:
        raise ValueError(f"load must be positive (or OPEN), got {r_l}")
    lo = -1.0
    hi = diode.n * diode.thermal_voltage * math.log1p(i_ph / diode.i_0) + 0.1
    if _kcl_residual(diode, static, i_ph, r_l, lo) < 0:
        raise ValueError("no junction bias above -1 V balances this photocurrent")
    v = 0.0
    for _ in range(max_iter):
        v = 0.5 * (lo + hi)
        res = _kcl_residual(diode, static, i_ph, r_l, v)
        if abs(res) < 1e-12:
            return OperatingPoint(i_ph=i_ph, v_dc=v, r_l=r_l, e_lux=e_lux)
        if res > 0:
            lo = v
        else:
            hi = v
    raise NoConvergence(
        f"operating point residual still {abs(res):.3g} A after {max_iter} bisections"
    )


def small_signal_at(diode: DiodeParams, static: PvStaticParams,
                    cap: CapacitanceModel, op: OperatingPoint) -> SmallSignalModel:
    """Linearise the receiver at a solved operating point."""
    return SmallSignalModel(
        r_p=parallel_resistance(diode, static, op.v_dc),
        c_p=parallel_capacitance(cap, diode.t_k, op.v_dc),
        r_s=static.r_s,
    )


def internal_impedance(model: SmallSignalModel, freq_hz) -> np.ndarray:
    """Complex two-terminal impedance R_S + R_P / (1 + j w R_P C_P)."""
    w = 2 * np.pi * np.asarray(freq_hz, dtype=float)
    return model.r_s + model.r_p / (1 + 1j * w * model.r_p * model.c_p)


def receiver_impedance(model: SmallSignalModel, r_l: float, freq_hz) -> np.ndarray:
    """Loaded transimpedance seen by the photocurrent: R_P||R_L rolled off by C_P."""
    if r_l <= 0:
        raise ValueError(f"load must be positive (or OPEN), got {r_l}")
    r_eff = model.r_p if math.isinf(r_l) else model.r_p * r_l / (model.r_p + r_l)
    w = 2 * np.pi * np.asarray(freq_hz, dtype=float)
    return model.r_s + r_eff / (1 + 1j * w * r_eff * model.c_p)


def _power_transfer(g_total, c_p: float, freq_hz) -> np.ndarray:
    # |1 / (G + j w C)|^2 with G the total real admittance at the junction node.
    w = 2 * np.pi * np.asarray(freq_hz, dtype=float)
    return 1.0 / (g_total ** 2 + (w * c_p) ** 2)


def transfer_dynamic(model: SmallSignalModel, r_l: float, freq_hz) -> np.ndarray:
    """Squared transimpedance of the linearised receiver into a load.

    DC value is (R_P || R_L)^2; single pole at 1 / (2 pi (R_P||R_L) C_P).
    """
    if r_l <= 0:
        raise ValueError(f"load must be positive (or OPEN), got {r_l}")
    g = 1.0 / model.r_p + (0.0 if math.isinf(r_l) else 1.0 / r_l)
    return _power_transfer(g, model.c_p, freq_hz)


def transfer_bias(diode: DiodeParams, static: PvStaticParams, cap: CapacitanceModel,
                  v_dc: float, r_l: float, freq_hz) -> np.ndarray:
    """Squared transimpedance evaluated directly at a junction bias.

    Identical to linearising first and calling transfer_dynamic; the diode
    branch drops out when it is not conducting.
    """
    if r_l <= 0:
        raise ValueError(f"load must be positive (or OPEN), got {r_l}")
    g = 1.0 / static.r_sh + (0.0 if math.isinf(r_l) else 1.0 / r_l)
    try:
        g += 1.0 / small_signal_resistance(diode, v_dc)
    except NonConductingDiode:
        pass
    return _power_transfer(g, parallel_capacitance(cap, diode.t_k, v_dc), freq_hz)


def transfer_conventional(diode: DiodeParams, static: PvStaticParams,
                          cap: CapacitanceModel, op: OperatingPoint,
                          freq_hz) -> np.ndarray:
    """Squared transimpedance of the classic photodiode model at an operating point.

    The load branch is the complex R_X = R_S + R_L + j w L_wire; diode
    resistance and capacitance are frozen at the operating-point bias.  With
    R_S = 0 and L_wire = 0 this reduces to transfer_dynamic.
    """
    if math.isinf(op.r_l):
        raise ValueError("conventional model needs a finite load")
    w = 2 * np.pi * np.asarray(freq_hz, dtype=float)
    r_x = static.r_s + op.r_l + 1j * w * static.l_wire
    g = 1.0 / static.r_sh
    try:
        g += 1.0 / small_signal_resistance(diode, op.v_dc)
    except NonConductingDiode:
        pass
    c_j = parallel_capacitance(cap, diode.t_k, op.v_dc)
    h = (op.r_l / r_x) / (g + 1j * w * c_j + 1.0 / r_x)
    return np.abs(h) ** 2


def frequency_response(model: SmallSignalModel, r_l: float,
                       freq_hz) -> FrequencyResponse:
    """Sampled transfer_dynamic packaged with its analytic pole."""
    freq_hz = np.asarray(freq_hz, dtype=float)
    r_eff = model.r_p if math.isinf(r_l) else model.r_p * r_l / (model.r_p + r_l)
    return FrequencyResponse(
        freq_hz=freq_hz,
        value=transfer_dynamic(model, r_l, freq_hz),
        dc_gain=r_eff ** 2,
        power=True,
        pole_hz=1.0 / (2 * math.pi * r_eff * model.c_p),
    )


def bandwidth_3db(resp: FrequencyResponse) -> float:
    """Frequency where the response falls 3 dB below its DC value.

    Uses the analytic pole when the producer supplied one (checking that it
    agrees with the sampled curve to within one grid step), otherwise finds
    the crossing by interpolating the samples in (log f, value) coordinates.
    """
    # Interpolation is linear in (log f, squared value); amplitude curves are
    # squared first so both modes read the same half-power crossing.
    y = resp.value if resp.power else resp.value ** 2
    level = (resp.dc_gain if resp.power else resp.dc_gain ** 2) / 2.0
    below = np.nonzero(y <= level)[0]
    if below.size == 0:
        raise NotReached(
            f"response never falls to its 3 dB level within "
            f"[{resp.freq_hz[0]:.3g}, {resp.freq_hz[-1]:.3g}] Hz"
        )
    i = below[0]
    if i == 0:
        # Already below at the first sample; the corner is off-grid low.
        raise NotReached("response is below its 3 dB level at the lowest sample")
    logf = np.log(resp.freq_hz)
    step = logf[i] - logf[i - 1]
    frac = (level - y[i - 1]) / (y[i] - y[i - 1])
    f_cross = math.exp(logf[i - 1] + frac * step)
    if resp.pole_hz is not None:
        if abs(math.log(resp.pole_hz / f_cross)) > step:
            raise ValueError(
                "annotated pole disagrees with the sampled 3 dB crossing "
                f"by more than one grid step ({resp.pole_hz:.6g} Hz vs "
                f"{f_cross:.6g} Hz)"
            )
        return resp.pole_hz
    return f_cross
