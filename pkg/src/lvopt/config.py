"""TOML vehicle and mission files.

Units are SI except angles, which are written in degrees.  A vehicle file::

    name = "KSLV-II"
    payload = 3000.0
    fairing = 900.0

    [[stage]]
    v_ex = 2923.0
    mdot = 1017.0
    a_exit = 3.6
    m_s = 14900.0
    m_p = 128200.0
    s_ref = 9.6
    eps = 0.104123      # optional, checked against m_s / (m_s + m_p)
    cd_table = [[0.8, 0.35], [1.2, 1.1]]   # optional (Mach, C_D) pairs

A mission file::

    name = "Case I"
    altitude = 300000.0
    inclination = 80.0
    flight_path_angle = 0.0     # optional
    q_max = 40000.0             # optional, Pa
    payload = 3000.0            # optional, defaults to the vehicle's
    fairing = 900.0             # optional, defaults to the vehicle's

    [site]
    latitude = 34.4
    longitude = 127.5
    altitude = 140.0

    [[iip_bound]]
    event = 1                   # stage number or "fairing"
    lon_max = 128.3

    [schedule]                  # optional, all keys optional
    vertical_rise = 8.0
    pitch_over = 10.0
    sub_phases = 3
    coast = 30.0
    fairing_sub_phase = 2
"""

from __future__ import annotations

import math
import sys
from importlib import resources
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import DEFAULT_CD_TABLE, StageSpec, VehicleSpec, default_schedule
from .earth import GeodeticPoint
from .optimizer import IipBound, MissionSpec

EPS_TOLERANCE = 1e-6

_STAGE_KEYS = {"v_ex", "mdot", "a_exit", "m_s", "m_p", "s_ref", "eps", "cd_table"}
_SCHEDULE_KEYS = {"vertical_rise", "pitch_over", "sub_phases", "coast", "fairing_sub_phase"}
_BOUND_KEYS = {"event", "lat_min", "lat_max", "lon_min", "lon_max"}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration file."""


def bundled(name):
    """Path of a bundled data file such as 'kslv2.toml' or 'case1.toml'."""
    return Path(str(resources.files("lvopt") / "data" / name))


def _read(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except tomllib.TOMLDecodeError as exc:
        # the decoder message carries the line and column
        raise ConfigError(f"{path}: {exc}") from None


def _number(table, key, where, required=True, default=None):
    if key not in table:
        if required:
            raise ConfigError(f"{where}: missing field '{key}'")
        return default
    val = table[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}: field '{key}' must be a number, got {val!r}")
    return float(val)


def _unknown(table, allowed, where):
    extra = set(table) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(sorted(extra))}")


def _stage(table, where):
    _unknown(table, _STAGE_KEYS, where)
    m_s = _number(table, "m_s", where)
    m_p = _number(table, "m_p", where)
    cd = table.get("cd_table", DEFAULT_CD_TABLE)
    try:
        cd = tuple((float(m), float(c)) for m, c in cd)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cd_table must be a list of [mach, cd] pairs") from None
    try:
        stage = StageSpec(
            v_ex=_number(table, "v_ex", where),
            mdot=_number(table, "mdot", where),
            m_s=m_s,
            m_p=m_p,
            a_exit=_number(table, "a_exit", where, required=False, default=0.0),
            s_ref=_number(table, "s_ref", where),
            cd_table=cd,
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    eps = _number(table, "eps", where, required=False)
    if eps is not None and abs(eps - stage.eps) > EPS_TOLERANCE:
        raise ConfigError(
            f"{where}: eps = {eps:.9g} disagrees with m_s/(m_s+m_p) = {stage.eps:.9g} "
            f"(tolerance {EPS_TOLERANCE:g})"
        )
    return stage


def vehicle_from_dict(data, where="vehicle"):
    _unknown(data, {"name", "payload", "fairing", "stage"}, where)
    stages = data.get("stage")
    if not isinstance(stages, list) or not stages:
        raise ConfigError(f"{where}: at least one [[stage]] table is required")
    specs = tuple(_stage(s, f"{where}: stage {k + 1}") for k, s in enumerate(stages))
    try:
        return VehicleSpec(
            specs,
            _number(data, "payload", where),
            _number(data, "fairing", where, required=False, default=0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_vehicle(path):
    return vehicle_from_dict(_read(path), str(path))


def vehicle_to_dict(vehicle, name=None):
    out = {}
    if name:
        out["name"] = name
    out["payload"] = float(vehicle.m_payload)
    out["fairing"] = float(vehicle.m_fairing)
    out["stage"] = [
        {
            "v_ex": s.v_ex,
            "mdot": s.mdot,
            "a_exit": s.a_exit,
            "m_s": s.m_s,
            "m_p": s.m_p,
            "eps": s.eps,
            "s_ref": s.s_ref,
            "cd_table": [list(p) for p in s.cd_table],
        }
        for s in vehicle.stages
    ]
    return out


def save_vehicle(vehicle, path, name=None):
    with open(path, "wb") as fh:
        tomli_w.dump(vehicle_to_dict(vehicle, name), fh)


def _bound(table, where):
    _unknown(table, _BOUND_KEYS, where)
    event = table.get("event")
    if event != "fairing" and (isinstance(event, bool) or not isinstance(event, int) or event < 1):
        raise ConfigError(f"{where}: event must be a stage number >= 1 or \"fairing\", got {event!r}")
    kw = {}
    for key in ("lat_min", "lat_max", "lon_min", "lon_max"):
        val = _number(table, key, where, required=False)
        kw[key] = None if val is None else math.radians(val)
    try:
        return IipBound(event, **kw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def mission_from_dict(data, vehicle=None, where="mission"):
    """Returns (MissionSpec, schedule)."""
    _unknown(data, {"name", "altitude", "inclination", "flight_path_angle", "speed", "q_max", "payload",
                    "fairing", "site", "iip_bound", "schedule"}, where)
    site = data.get("site")
    if not isinstance(site, dict):
        raise ConfigError(f"{where}: missing [site] table")
    _unknown(site, {"latitude", "longitude", "altitude"}, f"{where}: site")
    try:
        point = GeodeticPoint.from_degrees(
            _number(site, "latitude", f"{where}: site"),
            _number(site, "longitude", f"{where}: site"),
            _number(site, "altitude", f"{where}: site", required=False, default=0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: site: {exc}") from None

    default_pl = vehicle.m_payload if vehicle is not None else None
    default_fr = vehicle.m_fairing if vehicle is not None else 0.0
    payload = _number(data, "payload", where, required=default_pl is None, default=default_pl)
    fairing = _number(data, "fairing", where, required=False, default=default_fr)
    bounds = tuple(_bound(b, f"{where}: iip_bound {k + 1}") for k, b in enumerate(data.get("iip_bound", [])))
    try:
        mission = MissionSpec(
            h_req=_number(data, "altitude", where),
            i_req=math.radians(_number(data, "inclination", where)),
            site=point,
            m_payload=payload,
            m_fairing=fairing,
            gamma_req=math.radians(_number(data, "flight_path_angle", where, required=False, default=0.0)),
            v_i_req=_number(data, "speed", where, required=False),
            q_max=_number(data, "q_max", where, required=False),
            iip_bounds=bounds,
            name=str(data.get("name", "")),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None

    sched = data.get("schedule", {})
    _unknown(sched, _SCHEDULE_KEYS, f"{where}: schedule")
    kw = {}
    for key in _SCHEDULE_KEYS:
        if key in sched:
            val = _number(sched, key, f"{where}: schedule")
            kw[key] = int(val) if key in ("sub_phases", "fairing_sub_phase") else val
    n_stages = vehicle.n_stages if vehicle is not None else 3
    try:
        schedule = default_schedule(n_stages=n_stages, **kw)
    except ValueError as exc:
        raise ConfigError(f"{where}: schedule: {exc}") from None
    return mission, schedule


def load_mission(path, vehicle=None):
    """Read a mission file; payload and fairing default to the vehicle's."""
    return mission_from_dict(_read(path), vehicle, str(path))
