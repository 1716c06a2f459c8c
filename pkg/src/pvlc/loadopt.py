"""Load sweep and gain-bandwidth optimization of the loaded receiver.

Loading the cell below its internal resistance pulls the junction bias down,
which shrinks the junction capacitance: bandwidth rises faster than
transimpedance falls, so the gain-bandwidth product peaks at an interior
load.  The series resistance matters here: the photocurrent divides between
the junction and the R_S + R_L branch, so gain, corner frequency and GBP all
carry the R_S terms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .circuit import (
    CapacitanceModel,
    DiodeParams,
    NoConvergence,
    PvStaticParams,
    SmallSignalModel,
    small_signal_at,
    solve_operating_point,
)

__all__ = [
    "LoadSweepPoint",
    "LoadSweepResult",
    "loaded_response",
    "evaluate_load",
    "sweep_load",
    "read_sweep_csv",
    "write_sweep_csv",
    "sweep_summary_dict",
]

_CSV_HEADER = ["r_l_ohm", "v_dc_v", "gain_ohm", "f3db_hz", "gbp_ohm_hz"]


@dataclass(frozen=True)
class LoadSweepPoint:
    r_l: float
    v_dc: float
    gain: float
    f_3db: float
    gbp: float
    valid: bool = True


@dataclass
class LoadSweepResult:
    points: list
    best: int  # index of maximal gbp among valid points
    best_r_l: float
    best_gbp: float

    @property
    def best_point(self) -> LoadSweepPoint:
        return self.points[self.best]


def loaded_response(m: SmallSignalModel, r_l: float) -> tuple[float, float]:
    """DC transimpedance and corner frequency of a small-signal model into R_L.

    The load branch is R_S in series with R_L, so the transimpedance is
    R_P*R_L/(R_P + R_S + R_L) and the capacitance discharges through
    R_P || (R_S + R_L).  With R_S = 0 these reduce to the R_P || R_L forms.
    """
    if r_l <= 0:
        raise ValueError(f"load must be positive (or OPEN), got {r_l}")
    if math.isinf(r_l):
        gain = m.r_p
        r_int = m.r_p
    else:
        branch = m.r_s + r_l
        gain = m.r_p * r_l / (m.r_p + branch)
        r_int = m.r_p * branch / (m.r_p + branch)
    return gain, 1.0 / (2 * math.pi * r_int * m.c_p)


def _gbp(m: SmallSignalModel, r_l: float) -> float:
    # Algebraically gain * f_3db; the divider form keeps it exactly constant
    # when C_P is bias-independent and R_S = 0.
    divider = 1.0 if math.isinf(r_l) else r_l / (m.r_s + r_l)
    return divider / (2 * math.pi * m.c_p)


def evaluate_load(diode: DiodeParams, static: PvStaticParams,
                  cap: CapacitanceModel, i_ph: float, r_l: float,
                  e_lux: float | None = None) -> LoadSweepPoint:
    """Self-consistent sweep point: DC bias, linearisation, loaded response."""
    if not math.isinf(r_l) and r_l <= 0:
        raise ValueError(f"load must be positive (or OPEN), got {r_l}")
    branch = r_l if math.isinf(r_l) else static.r_s + r_l
    op = solve_operating_point(diode, static, i_ph, branch, e_lux=e_lux)
    m = small_signal_at(diode, static, cap, op)
    gain, f_3db = loaded_response(m, r_l)
    return LoadSweepPoint(r_l=r_l, v_dc=op.v_dc, gain=gain, f_3db=f_3db,
                          gbp=_gbp(m, r_l))


def _grid(r_min: float, r_max: float, points: int, scale: str) -> np.ndarray:
    if points < 1:
        raise ValueError("grid needs at least one point")
    if points == 1:
        if r_min != r_max:
            raise ValueError("single-point grid needs min == max")
        return np.array([r_min], dtype=float)
    if not (0 < r_min < r_max):
        raise ValueError(f"need 0 < min < max, got [{r_min}, {r_max}]")
    if scale == "log":
        return np.logspace(math.log10(r_min), math.log10(r_max), points)
    if scale == "linear":
        return np.linspace(r_min, r_max, points)
    raise ValueError(f"unknown grid scale {scale!r}")


def sweep_load(diode: DiodeParams, static: PvStaticParams, cap: CapacitanceModel,
               i_ph: float, r_min: float = 100.0, r_max: float = 4200.0,
               points: int = 60, scale: str = "log",
               refine: bool = False) -> LoadSweepResult:
    """Evaluate the grid and pick the GBP maximum (ties toward smaller R_L).

    Per-point solver failures mark the point invalid instead of aborting the
    sweep.  With refine=True a golden-section pass polishes the argmax to
    1 ohm resolution between the grid neighbours of the best point (falling
    back to the grid value if the refinement cannot improve on it).
    """
    pts = []
    for r_l in _grid(r_min, r_max, points, scale):
        try:
            pts.append(evaluate_load(diode, static, cap, i_ph, float(r_l)))
        except (NoConvergence, ValueError):
            pts.append(LoadSweepPoint(r_l=float(r_l), v_dc=math.nan,
                                      gain=math.nan, f_3db=math.nan,
                                      gbp=math.nan, valid=False))
    best = -1
    for i, p in enumerate(pts):
        if p.valid and math.isfinite(p.gbp):
            if best < 0 or p.gbp > pts[best].gbp:
                best = i
    if best < 0:
        raise ValueError("every grid point failed to evaluate")
    best_r_l, best_gbp = pts[best].r_l, pts[best].gbp
    if refine:
        lo = pts[best - 1].r_l if best > 0 and pts[best - 1].valid else pts[best].r_l
        hi = (pts[best + 1].r_l if best + 1 < len(pts) and pts[best + 1].valid
              else pts[best].r_l)
        if hi > lo:
            r_ref = _golden_max(
                lambda r: evaluate_load(diode, static, cap, i_ph, r).gbp,
                lo, hi, tol=1.0)
            gbp_ref = evaluate_load(diode, static, cap, i_ph, r_ref).gbp
            if gbp_ref >= best_gbp:
                best_r_l, best_gbp = r_ref, gbp_ref
    return LoadSweepResult(points=pts, best=best, best_r_l=best_r_l,
                           best_gbp=best_gbp)


def _golden_max(fun, lo: float, hi: float, tol: float) -> float:
    inv_phi = (math.sqrt(5.0) - 1) / 2
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def write_sweep_csv(result: LoadSweepResult, path) -> None:
    """Valid sweep points as plot-ready CSV rows (path or open text file)."""
    if hasattr(path, "write"):
        _write_sweep_rows(result, path)
        return
    with open(path, "w", newline="") as fh:
        _write_sweep_rows(result, fh)


def _write_sweep_rows(result: LoadSweepResult, fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(_CSV_HEADER)
    for p in result.points:
        if p.valid:
            writer.writerow([repr(p.r_l), repr(p.v_dc), repr(p.gain),
                             repr(p.f_3db), repr(p.gbp)])


def read_sweep_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise ValueError(
                f"expected header {','.join(_CSV_HEADER)!r}, got {header!r}"
            )
        return [LoadSweepPoint(*(float(c) for c in row)) for row in reader if row]


def sweep_summary_dict(result: LoadSweepResult) -> dict:
    return {
        "schema_version": 1,
        "best_r_l_ohm": result.best_r_l,
        "best_gbp": result.best_gbp,
    }
