"""Extraction of (R_S, R_P, C_P) from measured impedance spectra.

Seeding reads the Nyquist-arc geometry directly (series intercept at high
frequency, arc diameter at low frequency, apex frequency for the
capacitance); a complex nonlinear least-squares refinement then polishes all
three parameters together.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .circuit import FrequencyResponse, SmallSignalModel
from .optimize import damped_least_squares

__all__ = [
    "F_MIN_HZ",
    "F_MAX_HZ",
    "ImpedanceSpectrum",
    "FitResult",
    "DegenerateSpectrum",
    "synthetic_spectrum",
    "seed_estimate",
    "cnls_fit",
    "bode_modulus",
    "read_spectrum_csv",
    "write_spectrum_csv",
    "fit_result_to_dict",
]

# Validity window of the lumped RC model; inductive behaviour is neglected.
F_MIN_HZ = 0.1
F_MAX_HZ = 10e6

_CSV_HEADER = ["f_hz", "re_ohm", "im_ohm"]


class DegenerateSpectrum(ValueError):
    """Spectrum carries no resolvable capacitive arc."""


@dataclass
class ImpedanceSpectrum:
    freq_hz: np.ndarray
    re_ohm: np.ndarray
    im_ohm: np.ndarray
    illuminance_lux: float | None = None
    bias_v: float | None = None
    label: str = ""

    def __post_init__(self):
        self.freq_hz = np.asarray(self.freq_hz, dtype=float)
        self.re_ohm = np.asarray(self.re_ohm, dtype=float)
        self.im_ohm = np.asarray(self.im_ohm, dtype=float)
        if not (self.freq_hz.shape == self.re_ohm.shape == self.im_ohm.shape):
            raise ValueError("frequency, re and im arrays must share a shape")
        if self.freq_hz.ndim != 1 or self.freq_hz.size < 5:
            raise ValueError("need at least 5 spectrum points")
        if np.any(np.diff(self.freq_hz) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if self.freq_hz[0] < F_MIN_HZ or self.freq_hz[-1] > F_MAX_HZ:
            raise ValueError(
                f"frequencies outside the model validity window "
                f"[{F_MIN_HZ}, {F_MAX_HZ:g}] Hz"
            )

    @property
    def z(self) -> np.ndarray:
        return self.re_ohm + 1j * self.im_ohm


@dataclass
class FitResult:
    model: SmallSignalModel
    residual: float  # rms weighted complex misfit
    iterations: int
    converged: bool


def synthetic_spectrum(model: SmallSignalModel, freq_hz,
                       illuminance_lux: float | None = None,
                       bias_v: float | None = None,
                       label: str = "") -> ImpedanceSpectrum:
    """Forward-model a spectrum from a small-signal parameter triple."""
    from .circuit import internal_impedance

    z = internal_impedance(model, freq_hz)
    return ImpedanceSpectrum(freq_hz=np.asarray(freq_hz, dtype=float),
                             re_ohm=z.real, im_ohm=z.imag,
                             illuminance_lux=illuminance_lux, bias_v=bias_v,
                             label=label)


def seed_estimate(s: ImpedanceSpectrum) -> SmallSignalModel:
    """Geometric first guess from the Nyquist arc.

    R_S from Re{Z} on the high-frequency branch where the arc closes,
    R_S + R_P from the low-frequency branch, and C_P from the apex frequency
    of -Im{Z} (refined by a log-parabola through the apex neighbours so the
    estimate is not quantized to the measurement grid).
    """
    neg_im = -s.im_ohm
    if np.all(neg_im <= 0):
        raise DegenerateSpectrum("-Im{Z} is non-positive everywhere; no arc")
    k = int(np.argmax(neg_im))
    if k == 0 or k == neg_im.size - 1:
        raise DegenerateSpectrum("arc apex is not interior to the frequency span")
    # Series intercept: flattest point of the high-f branch; arc diameter
    # from the flattest point of the low-f branch.
    hi = k + int(np.argmin(np.abs(s.im_ohm[k:])))
    lo = int(np.argmin(np.abs(s.im_ohm[: k + 1])))
    r_s = float(s.re_ohm[hi])
    r_p = float(s.re_ohm[lo] - r_s)
    if r_p <= 0:
        raise DegenerateSpectrum("arc diameter is non-positive")
    # Log-parabola vertex through the apex and its neighbours.
    lf = np.log(s.freq_hz[k - 1: k + 2])
    y = neg_im[k - 1: k + 2]
    denom = y[0] - 2 * y[1] + y[2]
    if denom < 0:
        shift = 0.5 * (y[0] - y[2]) / denom * (lf[2] - lf[0]) / 2
        # Keep the vertex inside the neighbour window.
        shift = float(np.clip(shift, lf[0] - lf[1], lf[2] - lf[1]))
        f_apex = math.exp(lf[1] + shift)
    else:
        f_apex = float(s.freq_hz[k])
    c_p = 1.0 / (2 * math.pi * f_apex * r_p)
    return SmallSignalModel(r_p=r_p, c_p=c_p, r_s=max(r_s, 1e-12))


def _weights(s: ImpedanceSpectrum, weighting: str) -> np.ndarray:
    w = weighting.lower()
    if w == "unit":
        return np.ones(s.freq_hz.size)
    if w == "proportional":
        mag2 = s.re_ohm ** 2 + s.im_ohm ** 2
        if np.any(mag2 <= 0):
            raise ValueError("proportional weighting needs nonzero |Z| everywhere")
        return 1.0 / mag2
    raise ValueError(f"unknown weighting {weighting!r}")


def cnls_fit(s: ImpedanceSpectrum, seed: SmallSignalModel,
             weighting: str = "proportional") -> FitResult:
    """Complex nonlinear least-squares refinement of a seeded model.

    Minimizes sum w_k |Z_model(f_k) - Z_k|^2 over (R_S, R_P, C_P), with
    w_k = 1 (unit) or 1/|Z_k|^2 (proportional).  Parameters stay positive
    through a log parameterization.
    """
    w_sqrt = np.sqrt(_weights(s, weighting))
    z_meas = s.z
    omega = 2 * np.pi * s.freq_hz

    def residuals(x):
        r_s, r_p, c_p = np.exp(x)
        z = r_s + r_p / (1 + 1j * omega * r_p * c_p)
        dz = (z - z_meas) * w_sqrt
        return np.concatenate([dz.real, dz.imag])

    x0 = np.log([seed.r_s if seed.r_s > 0 else 1e-6, seed.r_p, seed.c_p])
    res = damped_least_squares(residuals, x0)
    r_s, r_p, c_p = np.exp(res.x)
    return FitResult(
        model=SmallSignalModel(r_p=float(r_p), c_p=float(c_p), r_s=float(r_s)),
        residual=math.sqrt(res.cost / s.freq_hz.size),
        iterations=res.iterations,
        converged=res.converged,
    )


def bode_modulus(s: ImpedanceSpectrum) -> FrequencyResponse:
    """Spectrum recast as a squared-modulus Bode curve for 3 dB readout."""
    mag2 = s.re_ohm ** 2 + s.im_ohm ** 2
    return FrequencyResponse(freq_hz=s.freq_hz, value=mag2,
                             dc_gain=float(mag2[0]), power=True)


def read_spectrum_csv(path) -> ImpedanceSpectrum:
    """Read `f_hz,re_ohm,im_ohm` rows plus an optional `<path>.meta.json`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise ValueError(
                f"expected header {','.join(_CSV_HEADER)!r}, got {header!r}"
            )
        rows = [[float(cell) for cell in row] for row in reader if row]
    if not rows:
        raise ValueError("spectrum file has no data rows")
    arr = np.asarray(rows, dtype=float)
    meta = {}
    meta_path = f"{path}.meta.json"
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
    return ImpedanceSpectrum(
        freq_hz=arr[:, 0], re_ohm=arr[:, 1], im_ohm=arr[:, 2],
        illuminance_lux=meta.get("illuminance_lux"),
        bias_v=meta.get("bias_v"),
        label=meta.get("label", ""),
    )


def write_spectrum_csv(s: ImpedanceSpectrum, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for f, re, im in zip(s.freq_hz, s.re_ohm, s.im_ohm):
            writer.writerow([repr(float(f)), repr(float(re)), repr(float(im))])
    if s.illuminance_lux is not None or s.bias_v is not None or s.label:
        meta = {"illuminance_lux": s.illuminance_lux, "bias_v": s.bias_v,
                "label": s.label}
        with open(f"{path}.meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def fit_result_to_dict(fr: FitResult, weighting: str | None = None) -> dict:
    out = {
        "schema_version": 1,
        "model": {
            "r_s_ohm": fr.model.r_s,
            "r_p_ohm": fr.model.r_p,
            "c_p_f": fr.model.c_p,
            "tau_n_s": fr.model.tau_n,
        },
        "residual": fr.residual,
        "iterations": fr.iterations,
        "converged": fr.converged,
    }
    if weighting is not None:
        out["weighting"] = weighting.lower()
    return out
