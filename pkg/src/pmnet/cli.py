"""Command line entry point: ``pmnet <subcommand>``.

Exit codes: 0 success, 2 configuration or schema error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import stages
from .analytics import FitError, GridError
from .csvio import SchemaError, parse_time
from .gateway import Gateway
from .scenario import GRID_RE, Analysis, load_scenario
from .seasons import ConfigError, SeasonCalendar

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("pmnet")


def _grid(text: str) -> tuple[int, int]:
    m = GRID_RE.match(text)
    if not m or int(m.group(1)) < 2 or int(m.group(2)) < 2:
        raise argparse.ArgumentTypeError(f"expected NXxNY with both >= 2, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _hour(text: str) -> int:
    try:
        return parse_time(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO-8601 time: {text!r}") from None


def _calendar(args) -> SeasonCalendar:
    if getattr(args, "scenario", None):
        return load_scenario(args.scenario).calendar
    return SeasonCalendar()


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario, seed=args.seed)
    if args.power is not None:
        scn.analysis.power = args.power
    if args.grid is not None:
        scn.analysis.nx, scn.analysis.ny = args.grid
    if args.subset is not None:
        scn.analysis.subsets = (args.subset,)
    body = stages.run_scenario(scn, Path(args.out))
    print(f"{len(body['files'])} artifacts written to {args.out}; manifest {body['hash']}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scn = load_scenario(args.scenario, seed=args.seed)
    stats = stages.simulate(scn, Path(args.out))
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_clean(args) -> int:
    counts = stages.clean(Path(args.input), Path(args.out))
    print(f"cleaned {len(counts)} device file(s), {sum(counts.values())} rows")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    models = stages.calibrate(Path(args.colocation), Path(args.input), Path(args.out), _calendar(args))
    print(f"{len(models)} calibration model(s) written")
    return EXIT_OK


def cmd_stats(args) -> int:
    stages.seasonal(Path(args.input), Path(args.out), _calendar(args))
    return EXIT_OK


def cmd_grid(args) -> int:
    a = load_scenario(args.scenario).analysis if args.scenario else Analysis(subsets=(), pollutants=("pm10",))
    power = a.power if args.power is None else args.power
    nx, ny = (a.nx, a.ny) if args.grid is None else args.grid
    subsets = a.subsets if args.subset is None else (args.subset,)
    seed = a.subset_seed if args.seed is None else args.seed
    pols = args.pollutant or list(a.pollutants)
    summary = stages.grids(Path(args.deployment), Path(args.input), Path(args.out), pols,
                           power, nx, ny, subsets, seed, args.hour)
    if args.hour is not None and subsets:
        for line in (Path(args.out) / "sparse.csv").read_text().splitlines()[1:]:
            hour, pol, k, err = line.split(",")
            print(f"{pol} {hour} k={k} rmse={float(err):.2f}")
    print(json.dumps(summary["pollutants"], sort_keys=True))
    return EXIT_OK


def cmd_correlate(args) -> int:
    n = stages.correlate(Path(args.deployment), Path(args.input), Path(args.out), args.pollutant)
    print(f"{n} device pairs")
    return EXIT_OK


def cmd_fit(args) -> int:
    threshold, bin_m = args.threshold, args.bin
    if args.scenario:
        a = load_scenario(args.scenario).analysis
        threshold = a.knee_threshold if threshold is None else threshold
        bin_m = a.bin_m if bin_m is None else bin_m
    report = stages.fit(Path(args.input), Path(args.out), 0.025 if threshold is None else threshold, bin_m)
    print(f"a={report['a']:.4f} b={report['b']:.6f} c={report['c']:.4f} d={report['d']:.6f} "
          f"rmse={report['residual_rmse']:.4f} knee={report['knee_distance_m']} m")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .gateway.server import IngestClient, start_background

    gw = Gateway(args.data_dir, snapshot_every=args.snapshot_every)
    ingest, api = start_background(gw, args.host, args.port, args.http_port)
    print(f"ingest on {args.host}:{ingest.server_address[1]}, api on http://{args.host}:{api.server_address[1]}",
          flush=True)
    try:
        if args.replay:
            _replay(args, gw, IngestClient, ingest.server_address[1])
            if args.exit_after_replay:
                return EXIT_OK
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        return EXIT_OK
    finally:
        gw.snapshot()
        ingest.shutdown()
        api.shutdown()


def _replay(args, gw, client_cls, port):
    """Drive a scenario's fleet against the ingest socket.

    ``--speed 0`` runs in simulated time (as fast as possible); otherwise
    sleeps so that one simulated second takes 1/speed wall seconds.
    """
    from .fleet import run_fleet, sense

    scn = load_scenario(args.replay, seed=args.seed)
    for e in scn.deployment:
        gw.register(e.device_id, name=e.name, lat=e.point.lat, lon=e.point.lon, location_type=e.location_type)
    readings = {e.device_id: sense(scn.field, e, scn.error_models[e.device_id], scn.weather, scn.times, scn.seed)
                for e in scn.deployment}
    with client_cls(args.host, port) as client:
        if args.speed > 0:
            last = [None]

            def sink(frame):
                from .device import decode_frame
                t = decode_frame(frame)[1][-1].created_at
                if last[0] is not None and t > last[0]:
                    time.sleep((t - last[0]) / args.speed)
                last[0] = t
                return client.send(frame)
        else:
            sink = client.send
        run = run_fleet(readings, scn.outages, sink)
    print(f"replayed {run.sensed} readings in {run.frames} frames, {run.dropped} dropped", flush=True)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate, ingest, clean, calibrate and analyse a scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--power", type=float)
    r.add_argument("--grid", type=_grid)
    r.add_argument("--subset", type=int)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("simulate", help="fleet simulation through an in-process gateway")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("clean", help="reliability filter, IQR outliers, gap interpolation")
    c.add_argument("--in", dest="input", required=True, help="directory of gateway exports")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_clean)

    k = sub.add_parser("calibrate", help="fit per-season models from co-location data and apply them")
    k.add_argument("--colocation", required=True)
    k.add_argument("--in", dest="input", required=True, help="directory of cleaned files")
    k.add_argument("--out", required=True)
    k.add_argument("--scenario", help="take the season calendar from this scenario")
    k.set_defaults(func=cmd_calibrate)

    st = sub.add_parser("stats", help="seasonal mean and variance per device")
    st.add_argument("--in", dest="input", required=True)
    st.add_argument("--out", required=True)
    st.add_argument("--scenario")
    st.set_defaults(func=cmd_stats)

    g = sub.add_parser("grid", help="IDW grids and sparse-subset RMSE")
    g.add_argument("--deployment", required=True)
    g.add_argument("--in", dest="input", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--scenario")
    g.add_argument("--hour", type=_hour)
    g.add_argument("--power", type=float)
    g.add_argument("--grid", type=_grid)
    g.add_argument("--subset", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--pollutant", action="append", choices=["pm10", "pm25"])
    g.set_defaults(func=cmd_grid)

    co = sub.add_parser("correlate", help="pairwise Kendall tau vs distance")
    co.add_argument("--deployment", required=True)
    co.add_argument("--in", dest="input", required=True)
    co.add_argument("--out", required=True)
    co.add_argument("--pollutant", default="pm10", choices=["pm10", "pm25"])
    co.set_defaults(func=cmd_correlate)

    f = sub.add_parser("fit", help="two-term exponential fit and knee distance")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--scenario")
    f.add_argument("--threshold", type=float)
    f.add_argument("--bin", type=float, help="average points in distance bins of this width (m)")
    f.set_defaults(func=cmd_fit)

    sv = sub.add_parser("serve", help="run the gateway (TCP ingest + HTTP query API)")
    sv.add_argument("--data-dir", default="gateway-data")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=7700)
    sv.add_argument("--http-port", type=int, default=8080)
    sv.add_argument("--snapshot-every", type=int, default=500, help="frames between snapshots")
    sv.add_argument("--replay", metavar="SCENARIO", help="drive this scenario's fleet against the server")
    sv.add_argument("--speed", type=float, default=0.0, help="simulated seconds per wall second; 0 = unpaced")
    sv.add_argument("--seed", type=int)
    sv.add_argument("--exit-after-replay", action="store_true")
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, GridError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
