"""Baseband PAM link simulator for the photovoltaic receiver.

Models the full optical link: Gray-coded PAM over a rectangular pulse, an
LED pole and the loaded receiver pole as cascaded one-pole low-pass stages,
additive white Gaussian noise at the load, then the receive DSP chain of
frame synchronization, LMS equalization trained by repeated sweeps over the
preamble and PAM demapping against trained level centroids.  Everything is seeded,
so a LinkConfig fully determines its LinkResult.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy import signal

from .circuit import OPEN, SmallSignalModel
from .loadopt import loaded_response

__all__ = [
    "LinkConfig",
    "LinkResult",
    "SyncResult",
    "EqResult",
    "BitCountMismatch",
    "SampleRateTooLow",
    "SyncFailed",
    "Divergence",
    "pam_modulate",
    "channel_filter",
    "frame_sync",
    "lms_equalize",
    "run_link",
    "find_max_rate",
    "calibrate_noise_density",
    "link_config_to_dict",
    "link_config_from_dict",
    "link_result_to_dict",
    "write_waveform_csv",
    "read_waveform_csv",
]

SYNC_THRESHOLD = 0.5  # normalized correlation peak below this flags the run
GUARD_SYMBOLS = 8
TRAINING_PASSES = 20  # LMS sweeps over the preamble before freezing

_WAVEFORM_HEADER = ["t_s", "v_volt"]


class BitCountMismatch(ValueError):
    """Bit count not divisible by bits per symbol."""


class SampleRateTooLow(ValueError):
    """Sample rate below 10x the fastest pole; filters would alias."""


class SyncFailed(RuntimeError):
    """Waveform cannot contain the expected frame."""


class Divergence(RuntimeError):
    """Equalizer coefficients blew up; the step size is too large."""


@dataclass(frozen=True)
class LinkConfig:
    """Everything needed to reproduce one link run."""

    symbol_rate: float            # symbols/s
    receiver: SmallSignalModel
    r_l: float                    # ohm, OPEN for unloaded
    i_ph_dc: float                # A, DC photocurrent the intensity rides on
    noise_density: float          # V/sqrt(Hz) referred to the load
    payload_len: int              # symbols
    pam_order: int = 8
    samples_per_symbol: int = 10
    modulation_index: float = 0.43
    led_f3db: float = 1.2e6
    preamble_len: int = 1000
    eq_taps: int = 15
    eq_step: float = 1e-3
    rng_seed: int = 1

    def __post_init__(self):
        m = self.pam_order
        if m < 2 or (m & (m - 1)) != 0:
            raise ValueError(f"pam_order must be a power of two, got {m}")
        if not 0.0 < self.modulation_index <= 1.0:
            raise ValueError(
                f"modulation_index must be in (0, 1], got {self.modulation_index}")
        if self.symbol_rate <= 0 or self.led_f3db <= 0:
            raise ValueError("rates must be positive")
        if self.samples_per_symbol < 4:
            raise ValueError(
                f"samples_per_symbol must be >= 4, got {self.samples_per_symbol}")
        if self.preamble_len <= 0 or self.payload_len <= 0:
            raise ValueError("preamble and payload lengths must be positive")
        if self.eq_taps < 1:
            raise ValueError(f"eq_taps must be >= 1, got {self.eq_taps}")
        if self.eq_step < 0:
            raise ValueError(f"eq_step must be >= 0, got {self.eq_step}")
        if self.i_ph_dc <= 0:
            raise ValueError(f"i_ph_dc must be positive, got {self.i_ph_dc}")
        if self.noise_density < 0:
            raise ValueError("noise_density must be >= 0")
        if not (self.r_l == OPEN or self.r_l > 0):
            raise ValueError(f"r_l must be positive or open, got {self.r_l}")

    @property
    def bits_per_symbol(self) -> int:
        return self.pam_order.bit_length() - 1

    @property
    def sample_rate(self) -> float:
        return self.symbol_rate * self.samples_per_symbol


@dataclass(frozen=True)
class LinkResult:
    ber: float
    bit_errors: int
    bits: int
    snr_est: float        # dB, training-residual estimate
    converged_sync: bool

    def __post_init__(self):
        if self.bits <= 0 or not 0 <= self.bit_errors <= self.bits:
            raise ValueError("bit counts are inconsistent")
        if abs(self.ber - self.bit_errors / self.bits) > 1e-12:
            raise ValueError("ber must equal bit_errors/bits")


class SyncResult(NamedTuple):
    symbols: np.ndarray   # aligned symbol stream, preamble first
    offset: int           # sample offset of the frame start
    peak: float           # normalized correlation peak
    converged: bool


class EqResult(NamedTuple):
    symbols: np.ndarray       # equalized symbol stream, original scale
    weights: np.ndarray
    training_mse: np.ndarray  # per-symbol squared error during training


# -- PAM mapping --------------------------------------------------------------

def _gray_tables(m: int):
    codes = np.arange(m) ^ (np.arange(m) >> 1)
    return codes, np.argsort(codes)  # gray code of index, and its inverse


def _bits_to_indices(bits: np.ndarray, cfg: LinkConfig) -> np.ndarray:
    bps = cfg.bits_per_symbol
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 1 or bits.size % bps != 0:
        raise BitCountMismatch(
            f"{bits.size} bits do not fill {bps}-bit symbols")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    words = bits.reshape(-1, bps) @ (1 << np.arange(bps - 1, -1, -1))
    _, inverse = _gray_tables(cfg.pam_order)
    return inverse[words]


def _indices_to_bits(idx: np.ndarray, cfg: LinkConfig) -> np.ndarray:
    bps = cfg.bits_per_symbol
    codes, _ = _gray_tables(cfg.pam_order)
    words = codes[np.asarray(idx, dtype=np.int64)]
    shifts = np.arange(bps - 1, -1, -1)
    return ((words[:, None] >> shifts) & 1).reshape(-1)


def _levels(cfg: LinkConfig) -> np.ndarray:
    # normalized intensity: DC level 1, peak-to-peak swing 2*modulation_index
    u = np.linspace(-1.0, 1.0, cfg.pam_order)
    return 1.0 + cfg.modulation_index * u


def pam_modulate(bits, cfg: LinkConfig) -> np.ndarray:
    """Gray-mapped PAM waveform in normalized intensity, NRZ pulses."""
    idx = _bits_to_indices(bits, cfg)
    return np.repeat(_levels(cfg)[idx], cfg.samples_per_symbol)


# -- channel -------------------------------------------------------------------

def _streams(cfg: LinkConfig):
    bit_seq, noise_seq = np.random.SeedSequence(cfg.rng_seed).spawn(2)
    return np.random.default_rng(bit_seq), np.random.default_rng(noise_seq)


def _frame_bits(cfg: LinkConfig) -> np.ndarray:
    rng, _ = _streams(cfg)
    n = (cfg.preamble_len + cfg.payload_len) * cfg.bits_per_symbol
    return rng.integers(0, 2, size=n)


def _poles(cfg: LinkConfig) -> tuple[float, float]:
    _, f_rx = loaded_response(cfg.receiver, cfg.r_l)
    return cfg.led_f3db, f_rx


def _settle_symbols(cfg: LinkConfig) -> int:
    # DC run-in so the preamble is not riding the charging transient
    tau = 1.0 / (2 * math.pi * min(_poles(cfg)))
    return max(4, math.ceil(10.0 * tau * cfg.symbol_rate))


def channel_filter(waveform, cfg: LinkConfig, rng=None) -> np.ndarray:
    """Normalized intensity in, volts on the load out.

    Two cascaded one-pole low-pass stages (LED, loaded receiver) discretized
    by the prewarped bilinear transform, scaled by the transimpedance and the
    DC photocurrent, plus seeded white Gaussian noise of the configured
    density.
    """
    fs = cfg.sample_rate
    gain, _ = loaded_response(cfg.receiver, cfg.r_l)
    poles = _poles(cfg)
    if fs < 10.0 * max(poles) * (1 - 1e-12):
        raise SampleRateTooLow(
            f"sample rate {fs:.3g} Hz < 10x pole {max(poles):.3g} Hz")
    y = np.asarray(waveform, dtype=float) * (gain * cfg.i_ph_dc)
    for f_c in poles:
        k = math.tan(math.pi * f_c / fs)  # prewarp puts the pole exactly at f_c
        y = signal.lfilter([k / (1 + k), k / (1 + k)], [1.0, (k - 1) / (k + 1)], y)
    if cfg.noise_density > 0:
        if rng is None:
            _, rng = _streams(cfg)
        y = y + rng.normal(0.0, cfg.noise_density * math.sqrt(fs / 2.0), y.size)
    return y


# -- receive DSP ---------------------------------------------------------------

def _preamble_template(cfg: LinkConfig) -> np.ndarray:
    """Noiseless receive waveform of the settle run-in plus preamble."""
    bits = _frame_bits(cfg)[: cfg.preamble_len * cfg.bits_per_symbol]
    sps = cfg.samples_per_symbol
    tx = np.concatenate([np.ones(_settle_symbols(cfg) * sps),
                         pam_modulate(bits, cfg)])
    quiet = replace(cfg, noise_density=0.0)
    return channel_filter(tx, quiet)[_settle_symbols(cfg) * sps:]


def frame_sync(rx, cfg: LinkConfig) -> SyncResult:
    """Locate the frame by normalized cross-correlation with the preamble.

    The correlation is mean-removed on both sides so the large DC level of
    the received waveform cannot fake a match.  A peak below 0.5 is reported
    as a failed sync, not raised.
    """
    rx = np.asarray(rx, dtype=float)
    sps = cfg.samples_per_symbol
    n_sym = cfg.preamble_len + cfg.payload_len
    template = _preamble_template(cfg)
    length = template.size
    off_max = rx.size - n_sym * sps
    if off_max < 0 or rx.size < length:
        raise SyncFailed(
            f"waveform of {rx.size} samples cannot hold {n_sym} symbols")
    t_zero = template - template.mean()
    num = signal.correlate(rx, t_zero, mode="valid", method="fft")
    c1 = np.concatenate([[0.0], np.cumsum(rx)])
    c2 = np.concatenate([[0.0], np.cumsum(rx * rx)])
    win_sum = c1[length:] - c1[:-length]
    win_var = c2[length:] - c2[:-length] - win_sum ** 2 / length
    den = np.sqrt(np.maximum(win_var, 0.0) * np.dot(t_zero, t_zero))
    corr = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    corr = corr[: off_max + 1]
    offset = int(np.argmax(corr))
    peak = float(corr[offset])
    symbols = rx[offset: offset + n_sym * sps].reshape(n_sym, sps).mean(axis=1)
    return SyncResult(symbols, offset, peak, peak >= SYNC_THRESHOLD)


def _ideal_symbols(cfg: LinkConfig) -> np.ndarray:
    # transmitted level sequence of the whole frame, normalized intensity
    return _levels(cfg)[_bits_to_indices(_frame_bits(cfg), cfg)]


def lms_equalize(symbols, cfg: LinkConfig) -> EqResult:
    """Feed-forward LMS equalizer trained on the preamble, then frozen.

    Training makes TRAINING_PASSES sweeps over the preamble at the fixed
    step; the severe eigenvalue spread of a low-pass ISI channel makes a
    single sweep insufficient at any stable step.  Input and training
    symbols are shifted and scaled to zero mean and unit RMS so eq_step is
    dimensionless; the output is mapped back to the input scale.  Taps
    start as a centered unit spike, so eq_step=0 passes the stream through
    unchanged.
    """
    x = np.asarray(symbols, dtype=float)
    n_train = cfg.preamble_len
    if x.size < n_train:
        raise ValueError(f"{x.size} symbols are fewer than the "
                         f"{n_train}-symbol preamble")
    mu_x = float(x[:n_train].mean())
    rms_x = float(np.sqrt(np.mean((x[:n_train] - mu_x) ** 2))) or 1.0
    xn = (x - mu_x) / rms_x
    d = _ideal_symbols(cfg)[:n_train]
    mu_d = float(d.mean())
    rms_d = float(np.sqrt(np.mean((d - mu_d) ** 2))) or 1.0
    dn = (d - mu_d) / rms_d

    taps, delay = cfg.eq_taps, cfg.eq_taps // 2
    # regressor for symbol i spans xn[i+delay] down to xn[i+delay-taps+1];
    # training runs in reversed-tap order so the slices stay forward
    xp = np.concatenate([np.zeros(taps - 1 - delay), xn, np.zeros(delay)])
    wr = np.zeros(taps)
    wr[taps - 1 - delay] = 1.0
    if cfg.eq_step > 0:
        errs = np.empty(TRAINING_PASSES * n_train)
        step = cfg.eq_step
        for p in range(TRAINING_PASSES):
            base = p * n_train
            for i in range(n_train):
                u = xp[i: i + taps]
                e = dn[i] - float(wr @ u)
                wr += step * e * u
                errs[base + i] = e * e
                if not np.isfinite(e) or wr @ wr > 1e12:
                    raise Divergence(
                        f"coefficient norm exceeded 1e6 at symbol {i}")
    else:
        y0 = np.convolve(xn, wr[::-1], mode="full")[delay: delay + n_train]
        errs = (dn - y0) ** 2
    w = wr[::-1]
    yn = np.convolve(xn, w, mode="full")[delay: delay + xn.size]
    return EqResult(yn * rms_x + mu_x, w, errs)


def _demap(eq_symbols: np.ndarray, cfg: LinkConfig) -> np.ndarray:
    """Nearest-centroid decisions; centroids trained per level on the preamble."""
    m = cfg.pam_order
    idx_true = _bits_to_indices(_frame_bits(cfg), cfg)[: cfg.preamble_len]
    train = eq_symbols[: cfg.preamble_len]
    u = np.linspace(-1.0, 1.0, m)
    seen = np.unique(idx_true)
    cent = np.empty(m)
    for k in seen:
        cent[k] = train[idx_true == k].mean()
    if seen.size < m:  # fill unseen levels from a linear fit over the seen ones
        a, b = np.polyfit(u[seen], cent[seen], 1)
        missing = np.setdiff1d(np.arange(m), seen)
        cent[missing] = a * u[missing] + b
    order = np.argsort(cent)
    bounds = (cent[order][1:] + cent[order][:-1]) / 2.0
    pay = eq_symbols[cfg.preamble_len:]
    return order[np.searchsorted(bounds, pay)]


def run_link(cfg: LinkConfig) -> LinkResult:
    """Full chain: modulate, filter, add noise, sync, equalize, demap, count."""
    sps = cfg.samples_per_symbol
    bits = _frame_bits(cfg)
    _, noise_rng = _streams(cfg)
    tx = np.concatenate([
        np.ones(_settle_symbols(cfg) * sps),
        pam_modulate(bits, cfg),
        np.ones(GUARD_SYMBOLS * sps),
    ])
    rx = channel_filter(tx, cfg, rng=noise_rng)
    sync = frame_sync(rx, cfg)
    n_bits = cfg.payload_len * cfg.bits_per_symbol
    if not sync.converged:
        be = n_bits // 2
        return LinkResult(ber=be / n_bits, bit_errors=be, bits=n_bits,
                          snr_est=0.0, converged_sync=False)
    eq = lms_equalize(sync.symbols, cfg)
    # training error is in the unit-RMS domain, so the tail MSE is 1/SNR
    tail = eq.training_mse[-min(100, eq.training_mse.size):]
    mse = float(np.mean(tail))
    snr = 10.0 * math.log10(1.0 / mse) if mse > 0 else math.inf
    dem_bits = _indices_to_bits(_demap(eq.symbols, cfg), cfg)
    errors = int(np.sum(dem_bits != bits[cfg.preamble_len * cfg.bits_per_symbol:]))
    return LinkResult(ber=errors / n_bits, bit_errors=errors, bits=n_bits,
                      snr_est=snr, converged_sync=True)


def find_max_rate(cfg: LinkConfig, rate_grid, fec_threshold: float = 3.8e-3,
                  min_bits: int = 100_000) -> float:
    """Largest bit rate on the grid whose BER is at or under the threshold.

    Each rate gets its own derived seed and at least min_bits payload bits;
    the oversampling factor is raised as needed to keep the sample rate ten
    times above the fastest pole.  Returns 0.0 when nothing passes.
    """
    rates = [float(r) for r in rate_grid]
    if not rates or any(b <= a for a, b in zip(rates, rates[1:])):
        raise ValueError("rate grid must be ascending and non-empty")
    if any(r <= 0 for r in rates):
        raise ValueError("rates must be positive")
    bps = cfg.bits_per_symbol
    f_max = max(_poles(cfg))
    best = 0.0
    for i, rate in enumerate(rates):
        f_sym = rate / bps
        sps = max(cfg.samples_per_symbol, math.ceil(10.0 * f_max / f_sym))
        run = replace(
            cfg,
            symbol_rate=f_sym,
            samples_per_symbol=sps,
            payload_len=max(cfg.payload_len, math.ceil(min_bits / bps)),
            rng_seed=cfg.rng_seed + i,
        )
        try:
            passed = run_link(run).ber <= fec_threshold
        except Divergence:
            # equalizer cannot stabilize at this rate: the link does not
            # close, which is a failed rate, not a caller error
            passed = False
        if passed:
            best = rate
    return best


def calibrate_noise_density(cfg: LinkConfig, target_ber: float,
                            density_lo: float, density_hi: float,
                            iters: int = 20) -> float:
    """Bisect the noise density (log scale) until run_link hits target_ber.

    BER grows with the noise floor, so an ordinary bisection on the seeded,
    deterministic link brackets the target.  Raises ValueError when the
    bracket does not straddle it.
    """
    if not 0 < target_ber < 0.5:
        raise ValueError(f"target_ber must be in (0, 0.5), got {target_ber}")
    if not 0 < density_lo < density_hi:
        raise ValueError("need 0 < density_lo < density_hi")

    def ber_at(density):
        return run_link(replace(cfg, noise_density=density)).ber

    if ber_at(density_lo) > target_ber:
        raise ValueError("ber at density_lo already exceeds the target")
    if ber_at(density_hi) < target_ber:
        raise ValueError("ber at density_hi is still under the target")
    lo, hi = density_lo, density_hi
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        if ber_at(mid) <= target_ber:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


# -- serialization -------------------------------------------------------------

def link_config_to_dict(cfg: LinkConfig) -> dict:
    return {
        "schema_version": 1,
        "symbol_rate_hz": cfg.symbol_rate,
        "receiver": {"r_p_ohm": cfg.receiver.r_p, "c_p_f": cfg.receiver.c_p,
                     "r_s_ohm": cfg.receiver.r_s},
        "r_l_ohm": "open" if cfg.r_l == OPEN else cfg.r_l,
        "i_ph_dc_a": cfg.i_ph_dc,
        "noise_density_v_rthz": cfg.noise_density,
        "payload_len": cfg.payload_len,
        "pam_order": cfg.pam_order,
        "samples_per_symbol": cfg.samples_per_symbol,
        "modulation_index": cfg.modulation_index,
        "led_f3db_hz": cfg.led_f3db,
        "preamble_len": cfg.preamble_len,
        "eq_taps": cfg.eq_taps,
        "eq_step": cfg.eq_step,
        "rng_seed": cfg.rng_seed,
    }


_CONFIG_KEYS = {
    "schema_version", "symbol_rate_hz", "receiver", "r_l_ohm", "i_ph_dc_a",
    "noise_density_v_rthz", "payload_len", "pam_order", "samples_per_symbol",
    "modulation_index", "led_f3db_hz", "preamble_len", "eq_taps", "eq_step",
    "rng_seed",
}


def link_config_from_dict(d: dict) -> LinkConfig:
    if not isinstance(d, dict):
        raise ValueError("link config document must be a JSON object")
    if d.get("schema_version") != 1:
        raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
    unknown = set(d) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown link config fields: {sorted(unknown)}")
    missing = _CONFIG_KEYS - set(d)
    if missing:
        raise ValueError(f"missing link config fields: {sorted(missing)}")
    rx = d["receiver"]
    r_l = d["r_l_ohm"]
    return LinkConfig(
        symbol_rate=d["symbol_rate_hz"],
        receiver=SmallSignalModel(r_p=rx["r_p_ohm"], c_p=rx["c_p_f"],
                                  r_s=rx["r_s_ohm"]),
        r_l=OPEN if r_l == "open" else float(r_l),
        i_ph_dc=d["i_ph_dc_a"],
        noise_density=d["noise_density_v_rthz"],
        payload_len=d["payload_len"],
        pam_order=d["pam_order"],
        samples_per_symbol=d["samples_per_symbol"],
        modulation_index=d["modulation_index"],
        led_f3db=d["led_f3db_hz"],
        preamble_len=d["preamble_len"],
        eq_taps=d["eq_taps"],
        eq_step=d["eq_step"],
        rng_seed=d["rng_seed"],
    )


def link_result_to_dict(r: LinkResult) -> dict:
    return {
        "schema_version": 1,
        "ber": r.ber,
        "bit_errors": r.bit_errors,
        "bits": r.bits,
        "snr_est_db": r.snr_est,
        "converged_sync": r.converged_sync,
    }


def write_waveform_csv(path, t_s, v_volt) -> None:
    t_s = np.asarray(t_s, dtype=float)
    v_volt = np.asarray(v_volt, dtype=float)
    if t_s.shape != v_volt.shape:
        raise ValueError("time and voltage arrays must have the same shape")
    with open(path, "w") as fh:
        fh.write(",".join(_WAVEFORM_HEADER) + "\n")
        for t, v in zip(t_s, v_volt):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def read_waveform_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != _WAVEFORM_HEADER:
            raise ValueError(f"expected header {','.join(_WAVEFORM_HEADER)}, "
                             f"got {','.join(header)}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError("waveform CSV must have two columns")
    return data[:, 0], data[:, 1]
