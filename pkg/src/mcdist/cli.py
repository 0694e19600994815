"""Command-line front end.

Subcommands::

    mcdist crlb       --config CFG [--out DIR]
    mcdist experiment --config CFG --out DIR [--seed N] [--realizations N] [--mode particle|poisson]
    mcdist simulate   --config CFG [--out DIR] [--realization I] [--seed N] [--mode ...]
    mcdist estimate   --series FILE --protocol sat|rtt|envd|ml [env and protocol flags]

Exit codes: 0 ok, 2 configuration/input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .channel import EnvironmentParams
from .config import MM_S, MS, UM, RunConfig, load_config
from .crlb import ObservationSeries
from .estimators import MlSearchSpec, envd_estimate, ml_estimate, rtt_estimate, sat_estimate
from .harness import ConfigError, SweepKind, crlb_curve, run_experiment
from .particle_sim import realization_rng, simulate_realization

logger = logging.getLogger("mcdist")

MSE_COLUMNS = ["sweep_value", "protocol", "mse_um2", "bias_um", "var_um2", "stderr_um2",
               "n_corrections", "n_cointoss"]
CRLB_COLUMNS = ["sweep_value", "crlb_m1_um2", "crlb_full_um2"]
CURVE_COLUMNS = ["d_um", "t_ms", "crlb_um2"]
ESTIMATE_COLUMNS = ["protocol", "d_hat_um", "corrections", "samples_used"]
SERIES_COLUMNS = ["t_ms", "count"]

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class InputError(Exception):
    pass


def fmt(x) -> str:
    """Shortest decimal that round-trips to the same double."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def _write(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def write_manifest(out: Path, run: RunConfig) -> None:
    manifest = {
        "config_digest": run.digest,
        "toolkit_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "seed": run.sim.seed,
        "resolved_config": run.resolved,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _overrides(args) -> dict:
    return {
        ("simulation", "seed"): getattr(args, "seed", None),
        ("simulation", "realizations"): getattr(args, "realizations", None),
        ("simulation", "mode"): getattr(args, "mode", None),
    }


def _outdir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_crlb(args) -> None:
    run = load_config(args.config, _overrides(args))
    if run.sweep_kind is SweepKind.FLOW_PARALLEL:
        raise ConfigError(f"{args.config}: crlb curves sweep distance; use distance_um")
    d_um = run.sweep_values if run.sweep_kind is SweepKind.DISTANCE else [run.env.d / UM]
    t_ms = run.time_ms if run.time_ms is not None else [float(t) for t in run.sim.times / MS]
    rows = crlb_curve(run.env, [d * UM for d in d_um], [t * MS for t in t_ms])
    by_si = {(d * UM, t * MS): (d, t) for d in d_um for t in t_ms}
    text = _csv_text(CURVE_COLUMNS, [(*by_si[(d, t)], c / UM**2) for d, t, c in rows])
    out = _outdir(args)
    _write(out / "crlb_curve.csv" if out else None, text)
    if out:
        write_manifest(out, run)


def cmd_experiment(args) -> None:
    run = load_config(args.config, _overrides(args))
    exp = run.experiment()
    out = _outdir(args)
    if out is None:
        raise ConfigError("experiment needs --out DIR")
    summaries = run_experiment(exp)
    mse_rows, crlb_rows = [], []
    for user_value, s in zip(run.sweep_values, summaries):
        for label, st in s.per_protocol.items():
            mse_rows.append((user_value, label, st.mse / UM**2, st.bias / UM, st.variance / UM**2,
                             st.stderr / UM**2, st.n_corrections, st.n_cointoss))
        crlb_rows.append((user_value, s.crlb_m1 / UM**2, s.crlb_full / UM**2))
    (out / "mse_sweep.csv").write_text(_csv_text(MSE_COLUMNS, mse_rows))
    (out / "crlb.csv").write_text(_csv_text(CRLB_COLUMNS, crlb_rows))
    write_manifest(out, run)


def cmd_simulate(args) -> None:
    run = load_config(args.config, _overrides(args))
    series = simulate_realization(run.env, run.sim, args.realization)
    text = _csv_text(SERIES_COLUMNS, zip(run.sim.times / MS, series.counts))
    out = _outdir(args)
    _write(out / "series.csv" if out else None, text)
    if out:
        write_manifest(out, run)


def read_series(path: str | Path) -> ObservationSeries:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in SERIES_COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
            rows = [(float(r["t_ms"]) * MS, float(r["count"])) for r in reader]
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path}: no observations")
    t, s = zip(*rows)
    try:
        return ObservationSeries(np.array(t), np.array(s))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _estimate_env(args) -> EnvironmentParams:
    if args.config:
        return load_config(args.config).env
    try:
        return EnvironmentParams(
            d=0.0,
            v_par=args.v_par_mm_s * MM_S,
            v_perp=args.v_perp_mm_s * MM_S,
            diff_coeff=args.diff_coeff_m2_s,
            k_degrade=args.k_per_s,
            n_emitted=args.n_emitted,
            r_rx=args.r_rx_um * UM,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def cmd_estimate(args) -> None:
    env = _estimate_env(args)
    series = read_series(args.series)
    rng = realization_rng(args.seed or 0, 0)
    try:
        search = MlSearchSpec(args.d_min_um * UM, args.d_max_um * UM, args.grid)
        if args.protocol == "sat":
            t_sa = args.t_sa_ms * MS if args.t_sa_ms is not None else float(series.times[0])
            # nearest sample; argmin keeps the earlier one on an exact tie
            i = int(np.argmin(np.abs(series.times - t_sa)))
            rec = sat_estimate(env, float(series.counts[i]), float(series.times[i]), rng)
        elif args.protocol == "rtt":
            rec = rtt_estimate(env, series, args.tau, rng)
        elif args.protocol == "envd":
            rec = envd_estimate(env, series, args.window, rng, search=search)
        else:
            rec = ml_estimate(env, series, search, rng)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    flags = "|".join(sorted(c.value for c in rec.corrections))
    _write(None, _csv_text(ESTIMATE_COLUMNS, [(rec.protocol.value, rec.d_hat / UM, flags, rec.samples_used)]))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcdist", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_flags(p, out_required=False):
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", required=out_required, metavar="DIR")
        p.add_argument("--seed", type=int)
        p.add_argument("--realizations", type=int)
        p.add_argument("--mode", choices=["particle", "poisson"])

    p = sub.add_parser("crlb", help="single-sample CRLB over a distance x time grid")
    run_flags(p)
    p.set_defaults(func=cmd_crlb)

    p = sub.add_parser("experiment", help="Monte Carlo MSE sweep for the configured protocols")
    run_flags(p, out_required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("simulate", help="dump one realization's observation series")
    run_flags(p)
    p.add_argument("--realization", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate distance from a t_ms,count series file")
    p.add_argument("--series", required=True, metavar="FILE")
    p.add_argument("--protocol", required=True, choices=["sat", "rtt", "envd", "ml"])
    p.add_argument("--config", metavar="PATH", help="take the [environment] section from a config")
    p.add_argument("--v-par-mm-s", type=float, default=0.0)
    p.add_argument("--v-perp-mm-s", type=float, default=0.0)
    p.add_argument("--diff-coeff-m2-s", type=float, default=1e-9)
    p.add_argument("--k-per-s", type=float, default=0.0)
    p.add_argument("--n-emitted", type=int, default=100_000)
    p.add_argument("--r-rx-um", type=float, default=0.5)
    p.add_argument("--t-sa-ms", type=float)
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--window", type=int, default=7)
    p.add_argument("--d-min-um", type=float, default=0.01)
    p.add_argument("--d-max-um", type=float, default=20.0)
    p.add_argument("--grid", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_estimate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"mcdist: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"mcdist: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
