"""Command-line front end.

    lvopt simulate|optimize|baseline|compare --vehicle V.toml --mission M.toml --out DIR
    lvopt iip --state X Y Z VX VY VZ [--time T]

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 baseline divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import tomli_w

from .baseline import solve_sequential
from .config import ConfigError, bundled, load_mission, load_vehicle
from .dynamics import simulate
from .earth import EarthModel
from .optimizer import Options, Problem, initial_guess, solve_simultaneous
from .outputs import NoImpactError, RectilinearOrbitError, flight_status, iip_predict, iip_track, orbital_elements
from .staging import required_dv

log = logging.getLogger("lvopt")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_DIVERGED = 4

CSV_COLUMNS = (
    "t", "v_i", "v_r", "h", "lon", "lat", "q", "gamma", "chi", "alpha", "beta",
    "t_go", "lat_iip", "lon_iip",
    "i", "h_p", "h_a", "a", "f", "e", "raan", "argp",
    "loss_pressure", "loss_drag", "loss_gravity", "loss_tvc",
    "mass", "phase", "stage",
)

ROWS = (
    ("dv_ideal", "V_f - V_i, m/s"),
    ("dv_loss", "Delta v_Loss, m/s"),
    ("dv_k", "Delta v_k, m/s"),
    ("m_s", "m_s,k, kg"),
    ("m_p", "m_p,k, kg"),
    ("m_liftoff", "Lift-off mass, kg"),
    ("iterations", "Number of iterations, -"),
    ("run_time", "Run time, s"),
)


def _deg_wrap(rad):
    d = math.degrees(rad)
    d = math.remainder(d, 360.0)
    return 180.0 if d <= -180.0 else d


def trajectory_rows(traj, earth=EarthModel()):
    """Per-sample dicts keyed by CSV_COLUMNS (SI units, angles in rad)."""
    status = flight_status(traj.t, traj.r, traj.v, traj.thrust_directions(), earth)
    iip = iip_track(traj, earth)
    rows = []
    for k in range(len(traj)):
        try:
            el = orbital_elements(traj.r[k], traj.v[k], earth)
            orb = (el.i, el.h_p, el.h_a, el.a, el.f, el.e, el.raan, el.argp)
        except (RectilinearOrbitError, ValueError):
            orb = (math.nan,) * 8
        row = {key: float(status[key][k]) for key in CSV_COLUMNS[:11]}
        row.update(t_go=iip[k, 0], lat_iip=iip[k, 1], lon_iip=iip[k, 2])
        row.update(zip(CSV_COLUMNS[14:22], orb))
        row.update(zip(CSV_COLUMNS[22:26], traj.losses[k]))
        row.update(mass=float(traj.mass[k]), phase=int(traj.phase[k]), stage=int(traj.stage[k]) + 1)
        rows.append(row)
    return rows


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def _fmt(val):
    if isinstance(val, (int, np.integer)):
        return str(int(val))
    return "nan" if not math.isfinite(val) else repr(float(val))


def _events(traj):
    out = []
    for p, ph in enumerate(traj.schedule):
        end = traj.phase_end[p]
        if ph.separates_stage is not None:
            out.append((f"stage {ph.separates_stage + 1} separation", end))
        if ph.fairing_separation:
            out.append(("fairing separation", end))
        if ph.orbit_insertion:
            out.append(("orbit insertion", end))
    return out


def tracks_geojson(traj, mission=None, earth=EarthModel()):
    """FeatureCollection: ground track, IIP track, event points and active IIP bounds (degrees)."""
    status = flight_status(traj.t, traj.r, traj.v, traj.thrust_directions(), earth)
    ground = [[_deg_wrap(lo), math.degrees(la)] for lo, la in zip(status["lon"], status["lat"])]
    iip = iip_track(traj, earth)
    ok = np.isfinite(iip[:, 0])
    iip_line = [[_deg_wrap(lo), math.degrees(la)] for la, lo in iip[ok, 1:]]
    feats = [
        {"type": "Feature", "properties": {"name": "ground track"},
         "geometry": {"type": "LineString", "coordinates": ground}},
        {"type": "Feature", "properties": {"name": "IIP track"},
         "geometry": {"type": "LineString", "coordinates": iip_line}},
    ]
    for name, st in _events(traj):
        lon = math.atan2(st.r[1], st.r[0]) - earth.omega * st.t
        lat = math.asin(st.r[2] / np.linalg.norm(st.r))
        props = {"name": name, "t": st.t, "altitude": float(np.linalg.norm(st.r) - earth.r_eq)}
        try:
            res = iip_predict(st.r, st.v, st.t, earth)
            props.update(iip_lat=math.degrees(res.lat), iip_lon=_deg_wrap(res.lon), t_go=res.t_go)
        except NoImpactError:
            pass
        feats.append({"type": "Feature", "properties": props,
                      "geometry": {"type": "Point", "coordinates": [_deg_wrap(lon), math.degrees(lat)]}})
    if mission is not None and mission.iip_bounds:
        pts = np.array(ground + iip_line)
        lat_lo, lat_hi = pts[:, 1].min() - 2.0, pts[:, 1].max() + 2.0
        lon_lo, lon_hi = pts[:, 0].min() - 2.0, pts[:, 0].max() + 2.0
        for b in mission.iip_bounds:
            for key in ("lon_min", "lon_max", "lat_min", "lat_max"):
                val = getattr(b, key)
                if val is None:
                    continue
                if key.startswith("lon"):
                    line = [[_deg_wrap(val), lat_lo], [_deg_wrap(val), lat_hi]]
                else:
                    line = [[lon_lo, math.degrees(val)], [lon_hi, math.degrees(val)]]
                feats.append({"type": "Feature",
                              "properties": {"name": f"IIP bound {key}", "event": str(b.event)},
                              "geometry": {"type": "LineString", "coordinates": line}})
    return {"type": "FeatureCollection", "features": feats}


def _column(mission, earth, vehicle, traj, iterations, run_time):
    m_s = [s.m_s for s in vehicle.stages]
    m_p = [s.m_p for s in vehicle.stages]
    return {
        "dv_ideal": required_dv(mission.h_req, mission.site, earth),
        "dv_loss": float(traj.total_loss) if traj is not None else math.nan,
        "dv_k": [float(d) for d in traj.dv_stage] if traj is not None else [],
        "m_s": m_s,
        "m_p": m_p,
        "m_liftoff": vehicle.m_liftoff,
        "iterations": iterations,
        "run_time": run_time,
    }


def _cell(key, val):
    if val is None:
        return "-"
    if isinstance(val, str):
        return val
    if isinstance(val, list):
        return "[" + ", ".join(f"{v:,.0f}" for v in val) + "]" if val else "-"
    if key == "run_time":
        return f"{val:.1f}"
    if isinstance(val, int):
        return str(val)
    return "-" if not math.isfinite(val) else f"{val:,.0f}"


def format_table(columns):
    """Rows labelled as in the published result tables; one column per method."""
    names = list(columns)
    cells = [[label] + [_cell(key, columns[n].get(key)) if columns[n] else "-" for n in names] for key, label in ROWS]
    head = ["Parameter"] + names
    widths = [max(len(r[i]) for r in cells + [head]) for i in range(len(head))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def _clean(obj):
    """Make a nested structure TOML-serialisable (no NaN, no None, plain floats)."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else "nan"
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_summary(out, table, record):
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text(table + "\n")
    with open(out / "summary.toml", "wb") as fh:
        tomli_w.dump(_clean(record), fh)


def _record(prefix, col, extra):
    rec = {k: v for k, v in col.items() if k != "run_time"}
    rec.update(extra)
    return {prefix: rec}


def _write_traj(out, traj, mission, earth, stem=""):
    write_csv(out / f"trajectory{stem}.csv", trajectory_rows(traj, earth))
    with open(out / f"tracks{stem}.geojson", "w") as fh:
        json.dump(tracks_geojson(traj, mission, earth), fh, indent=1)


def _options(args):
    kw = {}
    if args.nodes_per_phase is not None:
        kw["nodes_per_phase"] = args.nodes_per_phase
    if args.tol is not None:
        kw["tol"] = args.tol
    if args.max_iter is not None:
        kw["max_iter"] = args.max_iter
    return replace(Options(), **kw)


def _load(args):
    vehicle = load_vehicle(args.vehicle or bundled("kslv2.toml"))
    if args.mission is None:
        raise ConfigError("--mission is required")
    mission, schedule = load_mission(args.mission, vehicle)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out}: {exc}") from None
    return vehicle, mission, schedule, out


def _simultaneous_record(res, mission, earth):
    col = _column(mission, earth, res.vehicle, res.trajectory, None, res.wall_time)
    extra = dict(
        status=res.status, solver_iterations=res.iterations, kkt=res.kkt,
        max_eq=float(np.max(np.abs(res.eq), initial=0.0)),
        max_ineq=float(np.max(res.ineq, initial=-math.inf)) if len(res.ineq) else None,
        losses=dict(zip(("pressure", "drag", "gravity", "tvc"), map(float, res.losses))),
    )
    if res.evaluation is not None and res.evaluation.failed is None:
        extra["max_q"] = float(np.max(res.evaluation.info["status"]["q"]))
        extra["iip"] = {str(k): dict(lat=math.degrees(v.lat), lon=math.degrees(v.lon), t_go=v.t_go)
                        for k, v in res.evaluation.info["iip"].items()}
    return col, extra


def _baseline_record(res, mission, earth):
    last = res.iterations[-1] if res.iterations else None
    if res.converged:
        col = _column(mission, earth, res.vehicle, res.trajectory, len(res.iterations), res.wall_time)
    else:
        col = {key: None for key, _ in ROWS}
        col["iterations"] = f"{res.status} after iteration {len(res.iterations)}"
        col["run_time"] = res.wall_time
    extra = dict(status=res.status, message=res.message,
                 payload_last=last.payload if last else None,
                 m_liftoff=[it.m_liftoff for it in res.iterations],
                 m_liftoff_equivalent=[it.m_liftoff_equiv for it in res.iterations])
    return col, extra


def _write_baseline_log(out, res):
    with open(out / "baseline_iterations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        n = len(res.iterations[0].assumed_losses) if res.iterations else 0
        w.writerow(["iteration", "m_liftoff", "payload", "m_liftoff_equivalent", "change", "inner_status"]
                   + [f"assumed_loss_{k + 1}" for k in range(n)] + [f"computed_loss_{k + 1}" for k in range(n)]
                   + [f"m_s_{k + 1}" for k in range(n)])
        for it in res.iterations:
            w.writerow([it.index, _fmt(it.m_liftoff), _fmt(it.payload), _fmt(it.m_liftoff_equiv), _fmt(it.change), it.inner_status]
                       + [_fmt(x) for x in it.assumed_losses] + [_fmt(x) for x in it.computed_losses]
                       + [_fmt(x) for x in it.staging.m_s])


def cmd_simulate(args):
    vehicle, mission, schedule, out = _load(args)
    earth = EarthModel()
    opts = _options(args)
    start = time.perf_counter()
    prob = Problem(mission, vehicle, schedule, earth, opts, size_stages=False)
    guess = initial_guess(prob)
    traj = simulate(vehicle, schedule, prob.controls_for(guess), earth, mission.site, opts.nodes_per_phase)
    col = _column(mission, earth, vehicle, traj, None, time.perf_counter() - start)
    _write_traj(out, traj, mission, earth)
    table = format_table({"Simulation": col})
    write_summary(out, table, _record("simulation", col, {}))
    print(table)
    return EXIT_OK


def cmd_optimize(args):
    vehicle, mission, schedule, out = _load(args)
    earth = EarthModel()
    res = solve_simultaneous(mission, vehicle, schedule, options=_options(args), earth=earth)
    col, extra = _simultaneous_record(res, mission, earth)
    if res.trajectory is not None:
        _write_traj(out, res.trajectory, mission, earth)
    table = format_table({"Simultaneous Optimization": col})
    write_summary(out, table, _record("simultaneous", col, extra))
    print(table)
    print(f"status: {res.status} (kkt {res.kkt:.2e}; {res.message})")
    return EXIT_OK if res.converged else EXIT_SOLVER


def cmd_baseline(args):
    vehicle, mission, schedule, out = _load(args)
    earth = EarthModel()
    res = solve_sequential(mission, vehicle, schedule, options=_options(args), earth=earth, damping=args.damping)
    col, extra = _baseline_record(res, mission, earth)
    _write_baseline_log(out, res)
    if res.trajectory is not None:
        _write_traj(out, res.trajectory, mission, earth)
    table = format_table({"Staging - Trajectory Iteration": col})
    write_summary(out, table, _record("sequential", col, extra))
    print(table)
    print(f"status: {res.status} ({res.message})")
    if res.status == "diverged":
        return EXIT_DIVERGED
    return EXIT_OK if res.converged else EXIT_SOLVER


def cmd_compare(args):
    vehicle, mission, schedule, out = _load(args)
    earth = EarthModel()
    opts = _options(args)
    base = solve_sequential(mission, vehicle, schedule, options=opts, earth=earth, damping=args.damping)
    sim = solve_simultaneous(mission, vehicle, schedule, options=opts, earth=earth)
    bcol, bextra = _baseline_record(base, mission, earth)
    scol, sextra = _simultaneous_record(sim, mission, earth)
    _write_baseline_log(out, base)
    if sim.trajectory is not None:
        _write_traj(out, sim.trajectory, mission, earth, "_simultaneous")
    if base.trajectory is not None:
        _write_traj(out, base.trajectory, mission, earth, "_sequential")
    table = format_table({"Staging - Trajectory Iteration": bcol, "Simultaneous Optimization": scol})
    record = {**_record("sequential", bcol, bextra), **_record("simultaneous", scol, sextra)}
    if base.converged:
        delta = 100.0 * (base.m_liftoff - sim.m_liftoff) / base.m_liftoff
        table += f"\nLift-off mass reduction: {delta:.1f} %"
        record["liftoff_reduction_percent"] = delta
    else:
        table += f"\nSequential method {base.status}: {base.message}"
    write_summary(out, table, record)
    print(table)
    return EXIT_OK if sim.converged else EXIT_SOLVER


def cmd_iip(args):
    earth = EarthModel()
    r, v = np.array(args.state[:3]), np.array(args.state[3:])
    try:
        res = iip_predict(r, v, args.time, earth)
    except NoImpactError as exc:
        print(f"no impact: {exc}")
        return EXIT_SOLVER
    print(f"t_go = {res.t_go:.3f} s  lat = {math.degrees(res.lat):.6f} deg  lon = {_deg_wrap(res.lon):.6f} deg")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="lvopt", description="Launch vehicle staging and ascent optimisation")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("simulate", cmd_simulate, "fly the heuristic ascent on the reference vehicle"),
        ("optimize", cmd_optimize, "simultaneous stage sizing and trajectory optimisation"),
        ("baseline", cmd_baseline, "sequential staging/trajectory iteration"),
        ("compare", cmd_compare, "run both methods and tabulate them side by side"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--vehicle", help="vehicle TOML (default: bundled kslv2)")
        s.add_argument("--mission", help="mission TOML; bundled names case1..case3 also accepted")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--nodes-per-phase", type=int)
        s.add_argument("--tol", type=float)
        s.add_argument("--max-iter", type=int)
        s.add_argument("--seed", type=int, default=0, help="recorded for reproducibility; runs are deterministic")
        s.add_argument("--damping", type=float, default=0.0, help="loss-update damping for the sequential method")
        s.set_defaults(func=fn)
    s = sub.add_parser("iip", help="impact point of one inertial state")
    s.add_argument("--state", type=float, nargs=6, required=True, metavar=("X", "Y", "Z", "VX", "VY", "VZ"))
    s.add_argument("--time", type=float, default=0.0, help="epoch of the state, s after launch")
    s.set_defaults(func=cmd_iip)
    return p


def _resolve_mission(name):
    if name is None or Path(name).exists():
        return name
    candidate = bundled(name if name.endswith(".toml") else f"{name}.toml")
    return str(candidate) if candidate.exists() else name


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if hasattr(args, "mission"):
        args.mission = _resolve_mission(args.mission)
    if hasattr(args, "seed"):
        np.random.seed(args.seed)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
