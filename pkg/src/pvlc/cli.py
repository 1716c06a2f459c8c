"""Command-line front end for the receiver model.

Subcommands map one-to-one onto the library layers: ``fit`` runs the
complex nonlinear least-squares fitter on an impedance table, ``response``
tabulates the small-signal frequency response of a calibrated module into
a load, ``sweep`` scans termination resistances for the gain-bandwidth
optimum, ``simulate`` runs one seeded PAM link simulation and ``calibrate``
builds a module profile from anchor observations.

The payload goes to stdout, or to ``--out`` when given; progress and
residual reports go to stderr so payloads stay machine-readable.  Outputs
carry no timestamps and rerunning a command reproduces them byte for byte.
Exit status is 0 on success, 1 when a computation fails (a fit or
calibration that does not converge, an equalizer that diverges), 2 for
usage and validation errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace

import numpy as np

from .circuit import (OPEN, NoConvergence, NotReached, frequency_response,
                      receiver_impedance, small_signal_at,
                      solve_operating_point)
from .fitting import (DegenerateSpectrum, cnls_fit, fit_result_to_dict,
                      read_spectrum_csv, seed_estimate)
from .linksim import (Divergence, SyncFailed, link_config_from_dict,
                      link_result_to_dict, run_link)
from .loadopt import sweep_load, sweep_summary_dict, write_sweep_csv
from .profile import (DEFAULT_FREE, Anchor, Underdetermined, calibrate,
                      load_profile, photocurrent, profile_to_dict)

RESPONSE_HEADER = ["f_hz", "power_transfer", "z_ti_ohm"]

# Raised by the numerics when a well-posed problem cannot be solved; kept
# apart from plain ValueError so the shell can tell "did not converge"
# from "bad input".
_COMPUTATIONAL = (NoConvergence, NotReached, Divergence, SyncFailed,
                  DegenerateSpectrum, Underdetermined)


def _json_text(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _seed_arg(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _load_arg(text: str) -> float:
    if text.strip().lower() == "open":
        return OPEN
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"load must be a resistance in ohm or 'open', got {text!r}")
    if math.isnan(value) or value <= 0:
        raise argparse.ArgumentTypeError(f"load must be positive, got {text!r}")
    return value


def cmd_fit(args: argparse.Namespace) -> str:
    spectrum = read_spectrum_csv(args.spectrum)
    fr = cnls_fit(spectrum, seed_estimate(spectrum), weighting=args.weighting)
    print(f"fit: residual {fr.residual:.6g} after {fr.iterations} iterations, "
          f"converged={fr.converged}", file=sys.stderr)
    return _json_text(fit_result_to_dict(fr, weighting=args.weighting))


def cmd_response(args: argparse.Namespace) -> str:
    if not 0.0 < args.fmin < args.fmax:
        raise ValueError(f"need 0 < fmin < fmax, got [{args.fmin}, {args.fmax}]")
    if args.points < 2:
        raise ValueError(f"need at least 2 frequency points, got {args.points}")
    prof = load_profile(args.profile)
    i_ph = photocurrent(prof, args.lux)
    branch = args.load if math.isinf(args.load) else prof.static.r_s + args.load
    op = solve_operating_point(prof.diode, prof.static, i_ph, branch)
    model = small_signal_at(prof.diode, prof.static, prof.cap, op)
    freq = np.logspace(math.log10(args.fmin), math.log10(args.fmax), args.points)
    # the junction discharges through R_S in series with the load
    resp = frequency_response(model, branch, freq)
    h2 = resp.value / resp.dc_gain
    z_ti = np.abs(receiver_impedance(model, args.load, freq))
    lines = [",".join(RESPONSE_HEADER)]
    for f, h, z in zip(freq, h2, z_ti):
        lines.append(f"{float(f)!r},{float(h)!r},{float(z)!r}")
    return "\n".join(lines) + "\n"


def read_response_csv(path) -> tuple:
    """Parse a table written by the response command.

    Returns (freq_hz, power_transfer, z_ti_ohm) arrays.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESPONSE_HEADER:
            raise ValueError(
                f"expected header {','.join(RESPONSE_HEADER)!r}, got {header!r}")
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(RESPONSE_HEADER):
                raise ValueError(
                    f"expected {len(RESPONSE_HEADER)} columns, got {len(row)}")
            rows.append([float(c) for c in row])
    if not rows:
        raise ValueError("response table has no rows")
    cols = np.array(rows, dtype=float).T
    return cols[0], cols[1], cols[2]


def cmd_sweep(args: argparse.Namespace) -> str:
    prof = load_profile(args.profile)
    i_ph = photocurrent(prof, args.lux)
    result = sweep_load(prof.diode, prof.static, prof.cap, i_ph,
                        r_min=args.rmin, r_max=args.rmax, points=args.points,
                        scale=args.scale, refine=args.refine)
    print(f"sweep: best load {result.best_r_l:.6g} ohm, "
          f"gbp {result.best_gbp:.6g}", file=sys.stderr)
    if args.format == "json":
        return _json_text(sweep_summary_dict(result))
    buf = io.StringIO()
    write_sweep_csv(result, buf)
    return buf.getvalue()


def cmd_simulate(args: argparse.Namespace) -> str:
    with open(args.config) as fh:
        doc = json.load(fh)
    cfg = link_config_from_dict(doc)
    if args.seed is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    result = run_link(cfg)
    return _json_text(link_result_to_dict(result))


_ANCHOR_DOC_KEYS = {"schema_version", "anchors", "free", "name"}
_ANCHOR_ROW_KEYS = {"kind", "value", "lux", "bias_v", "r_l", "weight"}


def _read_anchors(path) -> tuple:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("anchor document must be a JSON object")
    if doc.get("schema_version") != 1:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    unknown = set(doc) - _ANCHOR_DOC_KEYS
    if unknown:
        raise ValueError(f"unknown anchor document fields: {sorted(unknown)}")
    rows = doc.get("anchors")
    if not isinstance(rows, list) or not rows:
        raise ValueError("anchor document needs a non-empty 'anchors' list")
    anchors = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            raise ValueError(f"anchor {i} must be a JSON object")
        unknown = set(row) - _ANCHOR_ROW_KEYS
        if unknown:
            raise ValueError(f"anchor {i}: unknown fields {sorted(unknown)}")
        if "kind" not in row or "value" not in row:
            raise ValueError(f"anchor {i}: 'kind' and 'value' are required")
        kw = {"kind": row["kind"]}
        for key in ("value", "lux", "bias_v", "r_l", "weight"):
            if key in row and row[key] is not None:
                try:
                    kw[key] = float(row[key])
                except (TypeError, ValueError):
                    raise ValueError(f"anchor {i}: {key!r} must be a number")
        anchors.append(Anchor(**kw))
    free = doc.get("free", list(DEFAULT_FREE))
    if (not isinstance(free, list) or not free
            or not all(isinstance(f, str) for f in free)):
        raise ValueError("'free' must be a non-empty list of parameter names")
    name = doc.get("name", "calibrated")
    if not isinstance(name, str) or not name:
        raise ValueError("'name' must be a non-empty string")
    return anchors, tuple(free), name


def cmd_calibrate(args: argparse.Namespace) -> str:
    anchors, free, name = _read_anchors(args.anchors)
    cr = calibrate(anchors, free=free, name=name)
    for a, r in zip(anchors, cr.residuals):
        print(f"calibrate: {a.kind} = {a.value:.6g} "
              f"log-relative residual {r:+.3e}", file=sys.stderr)
    print(f"calibrate: rms residual {cr.rms:.3e} over {len(anchors)} anchors, "
          f"{cr.iterations} iterations, converged={cr.converged}",
          file=sys.stderr)
    return _json_text(profile_to_dict(cr.profile))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="PATH", default=None,
                        help="write the payload to PATH instead of stdout")
    common.add_argument("--format", choices=("csv", "json"), default=None,
                        help="payload format; each command supports a subset")
    common.add_argument("--seed", type=_seed_arg, default=None, metavar="N",
                        help="override the simulation seed (simulate only)")

    parser = argparse.ArgumentParser(
        prog="pvlc",
        description="Model, fit and simulate photovoltaic visible-light receivers.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("fit", parents=[common],
                       help="fit a circuit model to an impedance table")
    p.add_argument("spectrum", help="impedance table CSV (f_hz,re_ohm,im_ohm)")
    p.add_argument("--weighting", choices=("proportional", "unit"),
                   default="proportional", help="residual weighting")
    p.set_defaults(func=cmd_fit, formats=("json",))

    p = sub.add_parser("response", parents=[common],
                       help="tabulate the loaded small-signal frequency response")
    p.add_argument("profile", help="module profile JSON")
    p.add_argument("--lux", type=float, required=True, help="illuminance in lux")
    p.add_argument("--load", type=_load_arg, default=OPEN, metavar="OHM",
                   help="termination resistance in ohm, or 'open' (default)")
    p.add_argument("--fmin", type=float, default=1.0, help="lowest frequency in Hz")
    p.add_argument("--fmax", type=float, default=1e7, help="highest frequency in Hz")
    p.add_argument("--points", type=int, default=300,
                   help="number of log-spaced frequency samples")
    p.set_defaults(func=cmd_response, formats=("csv",))

    p = sub.add_parser("sweep", parents=[common],
                       help="scan terminations for the gain-bandwidth optimum")
    p.add_argument("profile", help="module profile JSON")
    p.add_argument("--lux", type=float, required=True, help="illuminance in lux")
    p.add_argument("--rmin", type=float, default=100.0, help="smallest load in ohm")
    p.add_argument("--rmax", type=float, default=4200.0, help="largest load in ohm")
    p.add_argument("--points", type=int, default=60, help="number of grid points")
    p.add_argument("--scale", choices=("log", "linear"), default="log",
                   help="grid spacing")
    p.add_argument("--refine", action="store_true",
                   help="golden-section polish around the best grid point")
    p.set_defaults(func=cmd_sweep, formats=("csv", "json"))

    p = sub.add_parser("simulate", parents=[common],
                       help="run one seeded PAM link simulation")
    p.add_argument("config", help="link configuration JSON")
    p.set_defaults(func=cmd_simulate, formats=("json",))

    p = sub.add_parser("calibrate", parents=[common],
                       help="build a module profile from anchor observations")
    p.add_argument("anchors", help="anchor observations JSON")
    p.set_defaults(func=cmd_calibrate, formats=("json",))

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage or help
        return int(exc.code or 0)
    if args.format is None:
        args.format = args.formats[0]
    try:
        if args.format not in args.formats:
            raise ValueError(f"{args.command} writes "
                             f"{' or '.join(args.formats)}, not {args.format}")
        if args.seed is not None and args.func is not cmd_simulate:
            raise ValueError("--seed only applies to simulate")
        payload = args.func(args)
        if args.out is None:
            sys.stdout.write(payload)
        else:
            with open(args.out, "w", newline="") as fh:
                fh.write(payload)
    except _COMPUTATIONAL as exc:
        print(f"pvlc {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"pvlc {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
