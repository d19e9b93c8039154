"""Command-line front end: scenario files in, figure-ready CSVs out.

Sub-commands
------------
limits      deterministic bound sweeps (delay CRB vs transmit PSD, ESNR
            vs diffuse ratio)
bgg         geometric gain maps over a Cartesian box
montecarlo  trial-based RMSE / detection / delay-profile experiments

Every run writes a ``manifest.json`` (command, seed, resolved-config
hash, tool version) next to its CSVs; re-running with the same manifest
inputs reproduces byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, channel, evaluate, limits
from .config import db_to_linear, load_scenario, scenario_digest
from .evaluate import ESTIMATOR_MULTI, band_label
from .scenario import Scenario


def _parse_sweep(spec: str) -> list[float]:
    """Range syntax 'start:step:stop' (inclusive stop within half a step)."""
    try:
        start, step, stop = (float(x) for x in spec.split(":"))
    except ValueError as e:
        raise SystemExit(f"error: bad --sweep '{spec}' (want start:step:stop)") from e
    if step == 0 or (stop - start) * step < 0:
        raise SystemExit(f"error: empty sweep '{spec}'")
    n = int(round((stop - start) / step))
    vals = [start + i * step for i in range(n + 1)]
    if not vals:
        raise SystemExit("error: no sweep points")
    return vals


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".12g")
    return v


def _write_manifest(out: Path, args: argparse.Namespace, scenario, algo) -> None:
    manifest = {
        "scenario_path": str(Path(args.scenario).resolve()),
        "command": " ".join(sys.argv[1:]),
        "master_seed": getattr(args, "seed", None),
        "output_dir": str(out.resolve()),
        "tool_version": __version__,
        "config_sha256": scenario_digest(scenario, algo),
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _check_finite(path: Path) -> None:
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            for v in row.values():
                if v == "inf" or v == "-inf":
                    raise SystemExit(f"error: non-finite value in {path}")


# ---------------------------------------------------------------------------
# limits
# ---------------------------------------------------------------------------

def cmd_limits(args: argparse.Namespace) -> int:
    scenario, algo = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sweep = _parse_sweep(args.sweep)
    k = scenario.n_paths - 1        # benchmark path: the last (scatterer) path

    if args.mode == "crb":
        alphas = [float(x) for x in args.alpha_db.split(",")] if args.alpha_db else [None]
        rows = []
        for a_db in alphas:
            sc_a = scenario if a_db is None else scenario.with_dmc_ratio(db_to_linear(a_db))
            a_val = a_db if a_db is not None else 10 * math.log10(sc_a.dmc_ratio)
            for p_dbm in sweep:
                sc_p = sc_a.with_tx_psd(10 ** ((p_dbm - 30) / 10))
                rep = limits.fim(sc_p, channel.assemble_covariances(sc_p))
                row = [p_dbm, a_val,
                       math.sqrt(rep.crb("tau", k)) * 1e9,
                       math.sqrt(rep.approx_crb("tau", k)) * 1e9]
                row += [math.sqrt(rep.crb_band("tau", k, m)) * 1e9
                        for m in range(scenario.n_bands)]
                rows.append(row)
                print(f"crb: P={p_dbm:.2f} dBm/Hz alpha={a_val:.2f} dB", file=sys.stderr)
        header = ["tx_psd_dbm_per_hz", "alpha_db", "sqrt_crb_exact_ns", "sqrt_crb_approx_ns"]
        header += [f"sqrt_crb_{band_label(scenario, m)}_ns" for m in range(scenario.n_bands)]
        _write_csv(out / "fig4_crb.csv", header, rows)
        _check_finite(out / "fig4_crb.csv")
    else:   # esnr vs alpha
        rows = []
        for a_db in sweep:
            sc_a = scenario.with_dmc_ratio(db_to_linear(a_db))
            rep = limits.fim(sc_a, channel.assemble_covariances(sc_a))
            row = [a_db]
            for m in range(scenario.n_bands):
                row.append(10 * math.log10(max(rep.esnr_band(k, m), 1e-300)))
            for m in range(scenario.n_bands):
                row.append(10 * math.log10(max(rep.esnr(k, m), 1e-300)))
            rows.append(row)
            print(f"esnr: alpha={a_db:.2f} dB", file=sys.stderr)
        header = ["alpha_db"]
        header += [f"esnr_single_{band_label(scenario, m)}_db" for m in range(scenario.n_bands)]
        header += [f"esnr_combined_{band_label(scenario, m)}_db" for m in range(scenario.n_bands)]
        _write_csv(out / "fig5_esnr.csv", header, rows)
        _check_finite(out / "fig5_esnr.csv")
    _write_manifest(out, args, scenario, algo)
    return 0


# ---------------------------------------------------------------------------
# bgg
# ---------------------------------------------------------------------------

def cmd_bgg(args: argparse.Namespace) -> int:
    scenario, algo = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        x0, y0, x1, y1 = (float(v) for v in args.bbox.split(","))
    except ValueError as e:
        raise SystemExit(f"error: bad --bbox '{args.bbox}' (want x0,y0,x1,y1)") from e
    try:
        nx, ny = (int(v) for v in args.grid.lower().split("x"))
    except ValueError as e:
        raise SystemExit(f"error: bad --grid '{args.grid}' (want NXxNY)") from e
    try:
        bmap = limits.bgg_map(scenario, (x0, y0, x1, y1), (nx, ny))
    except ValueError as e:
        raise SystemExit(f"error: {e}")
    rows = []
    for m in range(scenario.n_bands):
        for iy, y in enumerate(bmap.ys):
            for ix, x in enumerate(bmap.xs):
                g = bmap.gamma_db[m, iy, ix]
                rows.append([float(x), float(y), m + 1, float(g)])
    _write_csv(out / "bgg_map.csv", ["x_m", "y_m", "band", "gamma_db"], rows)
    _write_manifest(out, args, scenario, algo)
    return 0


# ---------------------------------------------------------------------------
# montecarlo
# ---------------------------------------------------------------------------

def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_montecarlo(args: argparse.Namespace) -> int:
    scenario, algo = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.trials <= 0:
        raise SystemExit("error: --trials must be positive")
    names = [ESTIMATOR_MULTI] + [band_label(scenario, m) for m in range(scenario.n_bands)]

    if args.mode == "pdp":
        rows = evaluate.pdp_rows(scenario, args.trials, args.seed)
        _write_csv(out / "fig3_pdp.csv", ["delay_ns", "power_dbm", "band_index"], rows)
        _write_manifest(out, args, scenario, algo)
        return 0

    if args.mode == "roc":
        # reporting-floor ladder at the scenario's fixed transmit PSD
        floors = _parse_sweep(args.sweep) if args.sweep else list(np.arange(0.0, 20.5, 1.0))
        curves = evaluate.roc_sweep(scenario, algo, floors, args.trials, args.seed,
                                    progress=lambda t: _progress(f"roc: {t} trials"))
        rows = []
        for name, pts in sorted(curves.items()):
            pfa = np.array([p.pfa for p in pts])
            pd = np.array([p.pd for p in pts])
            pd_iso = evaluate.isotonic_pd(pfa, pd)
            for p, iso in zip(pts, pd_iso):
                rows.append([p.value, name, p.pd, p.pfa, float(iso),
                             p.pd_lo, p.pd_hi, p.pfa_lo, p.pfa_hi, p.n_trials])
        _write_csv(out / "fig8_roc.csv",
                   ["floor_db", "estimator", "pd", "pfa", "pd_isotonic",
                    "pd_lo", "pd_hi", "pfa_lo", "pfa_hi", "n_trials"], rows)
        _write_manifest(out, args, scenario, algo)
        return 0

    if args.mode == "rmse":
        sweep = _parse_sweep(args.sweep) if args.sweep else [
            10 * math.log10(scenario.tx_psd) + 30.0]
        k = scenario.n_paths - 1
        rmse_rows, roc_rows = [], []
        header_written = False

        def flush(point):
            nonlocal header_written
            for name in names:
                st = point.detection.get(name)
                if st is None:
                    continue
                ov = overlays[name]
                rmse_rows.append([
                    point.value, name,
                    _none(point.rmse(name, "tau", k), 1e9),
                    _none_deg(point.rmse(name, "aod", k)),
                    _none_deg(point.rmse(name, "aoa", k)),
                    math.sqrt(ov["tau"]) * 1e9,
                    math.degrees(math.sqrt(ov["aod"])),
                    math.degrees(math.sqrt(ov["aoa"])),
                    point.n_detections(name, "tau", k), st.n_trials,
                ])
                lo_d, hi_d = evaluate.wilson_interval(st.n_detected, st.n_trials)
                lo_f, hi_f = evaluate.wilson_interval(st.n_false_alarm, st.n_trials)
                roc_rows.append([point.value, name, st.pd, st.pfa,
                                 lo_d, hi_d, lo_f, hi_f, st.n_trials])
            _progress(f"montecarlo: P={point.value:.2f} dBm/Hz done")
            _write_rmse_roc()

        def _write_rmse_roc():
            _write_csv(out / "fig6_delay_rmse.csv", rmse_hdr, rmse_rows)
            _write_csv(out / "fig7_aod_rmse.csv", rmse_hdr, rmse_rows)
            _write_csv(out / "fig8_roc.csv", roc_hdr, roc_rows)

        rmse_hdr = ["tx_psd_dbm_per_hz", "estimator", "rmse_tau_ns", "rmse_aod_deg",
                    "rmse_aoa_deg", "sqrt_crb_tau_ns", "sqrt_crb_aod_deg",
                    "sqrt_crb_aoa_deg", "n_detected_path", "n_trials"]
        roc_hdr = ["tx_psd_dbm_per_hz", "estimator", "pd", "pfa",
                   "pd_lo", "pd_hi", "pfa_lo", "pfa_hi", "n_trials"]
        overlays = {}
        points = []
        for value in sweep:
            sc_p = scenario.with_tx_psd(10 ** ((value - 30) / 10))
            overlays = evaluate.crb_overlays(sc_p, k)
            pts = evaluate.rmse_sweep(sc_p, algo, [value], args.trials, args.seed)
            points.append(pts[0])
            flush(pts[0])
        _write_manifest(out, args, scenario, algo)
        return 0

    raise SystemExit(f"error: unknown mode '{args.mode}'")


def _none(v, scale):
    return float("nan") if v is None else v * scale


def _none_deg(v):
    return float("nan") if v is None else math.degrees(v)


# ---------------------------------------------------------------------------

def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="mbsense",
                                 description="multi-band bistatic sensing experiments")
    sub = ap.add_subparsers(dest="cmd", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario YAML file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="worker processes (informational; runs are sequential)")

    p_lim = sub.add_parser("limits", parents=[common], help="CRB / ESNR sweeps")
    p_lim.add_argument("--mode", choices=["crb", "esnr"], default="crb")
    p_lim.add_argument("--sweep", required=True,
                       help="start:step:stop (dBm/Hz for crb, dB for esnr)")
    p_lim.add_argument("--alpha-db", default=None,
                       help="comma-separated diffuse ratios in dB (crb mode)")
    p_lim.set_defaults(fn=cmd_limits)

    p_bgg = sub.add_parser("bgg", parents=[common], help="geometric gain map")
    p_bgg.add_argument("--bbox", required=True, help="x0,y0,x1,y1 [m]")
    p_bgg.add_argument("--grid", default="256x256", help="NXxNY cells")
    p_bgg.set_defaults(fn=cmd_bgg)

    p_mc = sub.add_parser("montecarlo", parents=[common], help="trial experiments")
    p_mc.add_argument("--mode", choices=["rmse", "roc", "pdp"], required=True)
    p_mc.add_argument("--trials", type=int, required=True)
    p_mc.add_argument("--sweep", default=None, help="tx PSD ladder start:step:stop [dBm/Hz]")
    p_mc.set_defaults(fn=cmd_montecarlo)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # config errors surface with a message, not a trace
        from .scenario import ScenarioError
        if isinstance(e, (ScenarioError, SystemExit)):
            print(f"error: {e}", file=sys.stderr)
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
