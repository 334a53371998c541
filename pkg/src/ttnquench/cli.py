"""Command line entry points: run experiments and post-process series."""

import argparse
import json
import os
import resource
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, analysis
from .config import ConfigError, parse_config
from .lattice import Lattice, build_mapping
from .series import TimeSeries
from .tdvp import run_quench


def run_experiment(spec, outdir, verbose=False):
    """Execute one spec into outdir; writes series.jsonl and manifest.json.

    The manifest carries wall time and memory; the data files never do, so
    reruns with one config hash are byte-identical.
    """
    os.makedirs(outdir, exist_ok=True)
    series_path = os.path.join(outdir, "series.jsonl")
    kwargs = spec.quench_kwargs()
    ck_minutes = spec.resolved["evolution"]["checkpoint_minutes"]
    if ck_minutes and ck_minutes > 0:
        kwargs["checkpoint_path"] = os.path.join(outdir, "checkpoint.bin")
        kwargs["checkpoint_minutes"] = ck_minutes
    progress = None
    if verbose:
        def progress(k, steps):
            stride = max(1, steps // 100)
            if steps and (k % stride == 0 or k == steps):
                print(f"\r{spec.name}: step {k}/{steps}", end="",
                      file=sys.stderr, flush=True)

    manifest = {
        "name": spec.name,
        "config_hash": spec.hash,
        "seed": spec.resolved["run"]["seed"],
        "package_version": __version__,
        "config": spec.resolved,
        "outputs": ["series.jsonl"],
        "status": "ok",
    }
    t0 = time.monotonic()
    try:
        with open(series_path, "w") as fp:
            series, _, info = run_quench(
                spec.lattice(), spec.pattern(), writer_fp=fp,
                extra_meta={"name": spec.name, "config_hash": spec.hash},
                progress=progress, **kwargs)
        info.pop("wall_seconds", None)
        manifest["info"] = info
    except Exception as exc:
        manifest["status"] = "error"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        if verbose:
            print(file=sys.stderr)
        manifest["wall_seconds"] = time.monotonic() - t0
        manifest["peak_rss_kb"] = \
            resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        if "checkpoint_path" in kwargs \
                and os.path.exists(kwargs["checkpoint_path"]):
            manifest["outputs"].append("checkpoint.bin")
        with open(os.path.join(outdir, "manifest.json"), "w") as fp:
            json.dump(manifest, fp, indent=2, sort_keys=True)
            fp.write("\n")
    return manifest, series


def _cmd_run(args):
    spec, _ = parse_config(args.config, args.set)
    outdir = os.path.join(args.outdir, spec.name)
    manifest, _ = run_experiment(spec, outdir, verbose=args.verbose)
    print(f"{spec.name}: ok ({outdir})")
    return 0


def _run_member(member, outdir):
    try:
        run_experiment(member, outdir)
        return "ok", ""
    except Exception as exc:
        return "error", f"{type(exc).__name__}: {exc}"


def _common_times(ref, other):
    ta = np.round(ref.t, 9)
    tb = np.round(other.t, 9)
    _, ia, ib = np.intersect1d(ta, tb, return_indices=True)
    return ia, ib


def _cmd_sweep(args):
    spec, sweep = parse_config(args.config, args.set)
    if sweep is None:
        print("config has no [sweep] section", file=sys.stderr)
        return 2
    members = sweep.members()
    base = os.path.join(args.outdir, spec.name)
    dirs = [os.path.join(base, f"member_{i:02d}")
            for i in range(len(members))]
    workers = int(os.environ.get("TTNQUENCH_WORKERS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_member, members, dirs))
    else:
        outcomes = [_run_member(m, d) for m, d in zip(members, dirs)]

    ref_i = sweep.reference
    summary = {"parameter": sweep.parameter, "values": list(sweep.values),
               "reference": ref_i, "members": []}
    ref_series = None
    if outcomes[ref_i][0] == "ok":
        ref_series = TimeSeries.read(os.path.join(dirs[ref_i],
                                                  "series.jsonl"))
    for i, (member, d) in enumerate(zip(members, dirs)):
        entry = {"value": sweep.values[i], "dir": d,
                 "status": outcomes[i][0]}
        if outcomes[i][0] != "ok":
            entry["error"] = outcomes[i][1]
        elif ref_series is not None:
            ser = TimeSeries.read(os.path.join(d, "series.jsonl"))
            ia, ib = _common_times(ref_series, ser)
            if ia.size >= 2:
                dev = np.max(np.abs(ref_series.column("sz")[ia]
                                    - ser.column("sz")[ib]))
                entry["max_sz_deviation"] = float(dev)
                entry["compared_samples"] = int(ia.size)
            entry["final_energy"] = ser.samples[-1]["energy"]
        summary["members"].append(entry)
    with open(os.path.join(base, "sweep.json"), "w") as fp:
        json.dump(summary, fp, indent=2, sort_keys=True)
        fp.write("\n")

    print(f"sweep over {sweep.parameter} ({len(members)} runs)")
    for entry in summary["members"]:
        line = f"  {sweep.parameter}={entry['value']}: {entry['status']}"
        if "max_sz_deviation" in entry:
            line += f"  max |dsz| vs ref = {entry['max_sz_deviation']:.3e}"
        print(line)
    return 0 if outcomes[ref_i][0] == "ok" else 1


def _load_signal(args):
    series = TimeSeries.read(args.series)
    if args.site is not None:
        x = series.sz_site(args.site)
    else:
        x = series.column(args.column)
        if x.ndim != 1:
            raise SystemExit(
                f"column {args.column!r} is not scalar; use --site")
    t = series.t
    mask = (t >= args.t_min) & (t <= args.t_max)
    return series, t[mask], x[mask]


def _cmd_spectrum(args):
    _, t, x = _load_signal(args)
    sp = analysis.spectral_density(t, x, window=args.window,
                                   remove_mean=not args.keep_mean)
    out = sys.stdout if args.output is None else open(args.output, "w")
    try:
        out.write(f"# window={sp.window} dt={sp.dt:.12g} samples={t.size}\n")
        out.write("# omega magnitude\n")
        for w, m in zip(sp.omega, sp.magnitude):
            out.write(f"{w:.12g} {m:.12g}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_peaks(args):
    _, t, x = _load_signal(args)
    sp = analysis.spectral_density(t, x, window=args.window,
                                   remove_mean=not args.keep_mean)
    peaks = analysis.find_spectral_peaks(sp, args.min_prominence)
    print("# omega height omega_interp")
    for p in peaks:
        print(f"{p.omega:.12g} {p.height:.12g} {p.omega_interp:.12g}")
    return 0


def _cut_distances(entry):
    offsets = entry["offsets"]
    n = len(offsets)
    if entry["ring"]:
        return [min(k % n, (-k) % n) for k in offsets]
    return [abs(k) for k in offsets]


def _cmd_front_fit(args):
    series = TimeSeries.read(args.series)
    cuts = {c["key"]: c for c in series.meta.get("cuts", [])}
    if args.cut not in cuts:
        raise SystemExit(f"series has no cut {args.cut!r}; "
                         f"available: {sorted(cuts) or 'none'}")
    entry = cuts[args.cut]
    distances = _cut_distances(entry)
    values = series.column(args.cut)
    fit = analysis.front_velocity_fit(series.t, values, distances,
                                      args.threshold,
                                      max_distance=args.max_distance)
    print(f"velocity {fit.velocity:.6g}")
    print(f"intercept {fit.intercept:.6g}")
    print("# distance arrival_time")
    for d, t in zip(fit.distances, fit.times):
        print(f"{d:g} {t:.6g}")
    if args.at is not None:
        reach = analysis.front_distance(series.t, values, distances,
                                        args.threshold, args.at)
        print(f"distance_by_t={args.at:g} {reach:g}")
    return 0


def _cmd_counts(args):
    for kind in analysis.COUNT_KINDS:
        print(f"{kind} {analysis.excitation_count(args.n, kind)}")
    return 0


def _cmd_perturb(args):
    lv = analysis.perturbative_energies(args.j, args.g, args.n)
    print(f"e0 {lv.e0:.12g}")
    print(f"e1 {lv.e1:.12g}")
    print(f"e2 {lv.e2:.12g}")
    print(f"delta01 {lv.delta01:.12g}")
    print(f"delta12 {lv.delta12:.12g}")
    print(f"delta02 {lv.delta02:.12g}")
    return 0


def _cmd_map_dump(args):
    lat = Lattice(args.rows, args.cols, row_boundary=args.row_boundary,
                  col_boundary=args.col_boundary)
    mapping = build_mapping(lat)
    print(f"# scheme={mapping.scheme} fallback={mapping.fallback}")
    print(mapping.dump(), end="")
    return 0


def _signal_args(sub):
    grp = sub.add_mutually_exclusive_group(required=True)
    grp.add_argument("--site", type=int,
                     help="row-major site whose sz history to use")
    grp.add_argument("--column", help="scalar series column to use")
    sub.add_argument("--t-min", type=float, default=0.0)
    sub.add_argument("--t-max", type=float, default=np.inf)
    sub.add_argument("--window", choices=analysis.WINDOWS, default="hamming")
    sub.add_argument("--keep-mean", action="store_true",
                     help="skip windowed mean removal")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ttnquench",
        description="Quench dynamics of the 2d transverse-field Ising "
                    "model on tree tensor networks.")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("run", help="run one experiment config")
    p.add_argument("config")
    p.add_argument("-o", "--outdir", default="runs")
    p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=V",
                   help="override a config value")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = subs.add_parser("sweep", help="run the [sweep] family of a config")
    p.add_argument("config")
    p.add_argument("-o", "--outdir", default="runs")
    p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=V")
    p.set_defaults(func=_cmd_sweep)

    p = subs.add_parser("spectrum", help="magnitude spectrum of a signal")
    p.add_argument("series")
    _signal_args(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_spectrum)

    p = subs.add_parser("peaks", help="spectral peaks of a signal")
    p.add_argument("series")
    _signal_args(p)
    p.add_argument("--min-prominence", type=float, default=0.05)
    p.set_defaults(func=_cmd_peaks)

    p = subs.add_parser("front-fit", help="fit a correlation front velocity")
    p.add_argument("series")
    p.add_argument("--cut", required=True, help="cut column key")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--max-distance", type=float)
    p.add_argument("--at", type=float,
                   help="also report the distance reached by this time")
    p.set_defaults(func=_cmd_front_fit)

    p = subs.add_parser("counts", help="flip-configuration counts")
    p.add_argument("n", type=int, help="linear size of the torus")
    p.set_defaults(func=_cmd_counts)

    p = subs.add_parser("perturb", help="second-order low levels")
    p.add_argument("n", type=int, help="linear size of the torus")
    p.add_argument("--g", type=float, required=True)
    p.add_argument("--j", type=float, default=1.0)
    p.set_defaults(func=_cmd_perturb)

    p = subs.add_parser("map-dump", help="print the 1d site ordering")
    p.add_argument("rows", type=int)
    p.add_argument("cols", type=int)
    p.add_argument("--row-boundary", choices=("periodic", "open"),
                   default="periodic")
    p.add_argument("--col-boundary", choices=("periodic", "open"),
                   default="periodic")
    p.set_defaults(func=_cmd_map_dump)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
