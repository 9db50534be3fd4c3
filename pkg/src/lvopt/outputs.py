"""Derived flight outputs: flight-status variables, orbital elements and the
instantaneous impact point (IIP) of the unpowered Keplerian arc."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .earth import EarthModel, _atmosphere_array, wrap_angle

_TWO_PI = 2.0 * math.pi


class RectilinearOrbitError(ValueError):
    """Angular momentum too small to define the orbital plane."""


class NoImpactError(ValueError):
    """The forward ballistic arc never reaches the Earth's surface."""


@dataclass(frozen=True)
class OutputRecord:
    t: float
    v_i: float
    v_r: float
    h: float
    lon: float
    lat: float
    q: float
    gamma: float
    chi: float
    alpha: float
    beta: float
    degenerate: bool = False


@dataclass(frozen=True)
class OrbitalElements:
    a: float
    e: float
    i: float
    raan: float
    argp: float
    f: float
    h_p: float
    h_a: float


@dataclass(frozen=True)
class IipResult:
    t_go: float
    lat: float
    lon: float


def flight_status(t, r, v, e_t, earth=EarthModel()):
    """Vectorised flight-status outputs for (N,3) position/velocity samples.

    Returns a dict of arrays keyed like OutputRecord fields.  Angles that are
    undefined at zero speed come back as 0 with `degenerate` set.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    rn = np.linalg.norm(r, axis=1)
    up = r / rn[:, None]
    w = np.array([0.0, 0.0, earth.omega])
    v_rel = v - np.cross(w, r)
    v_i = np.linalg.norm(v, axis=1)
    v_r = np.linalg.norm(v_rel, axis=1)
    alt = rn - earth.r_eq
    atm = _atmosphere_array(alt)
    q = 0.5 * atm[:, 2] * v_r**2

    small_v = v_i < 1e-6
    small_vr = v_r < 1e-6
    gamma = np.where(small_v, 0.0, np.arcsin(np.clip(np.sum(v * up, axis=1) / np.where(small_v, 1.0, v_i), -1.0, 1.0)))

    # earth-fixed longitude/latitude (ECI == ECEF at t = 0)
    ang = earth.omega * t
    lon_inertial = np.arctan2(r[:, 1], r[:, 0])
    lon = np.array([wrap_angle(a) for a in lon_inertial - ang])
    lat = np.arcsin(np.clip(r[:, 2] / rn, -1.0, 1.0))

    # velocity heading of the relative velocity, clockwise from north (rotation-invariant)
    east = np.cross(np.array([0.0, 0.0, 1.0]), up)
    en = np.linalg.norm(east, axis=1)
    east = np.where(en[:, None] > 1e-12, east / np.where(en > 1e-12, en, 1.0)[:, None], np.array([0.0, 1.0, 0.0]))
    north = np.cross(up, east)
    chi = np.where(small_vr, 0.0, np.arctan2(np.sum(v_rel * east, axis=1), np.sum(v_rel * north, axis=1)))

    alpha, beta = aero_angles(e_t, v_rel, up)
    return dict(
        t=t, v_i=v_i, v_r=v_r, h=alt, lon=lon, lat=lat, q=q, gamma=gamma, chi=chi,
        alpha=alpha, beta=beta, degenerate=small_v | small_vr,
    )


def aero_angles(e_t, v_rel, up):
    """Angle of attack (in the vertical plane of the relative wind) and sideslip."""
    e_t = np.atleast_2d(np.asarray(e_t, dtype=float))
    v_rel = np.atleast_2d(v_rel)
    up = np.atleast_2d(up)
    vn = np.linalg.norm(v_rel, axis=1)
    ok = vn > 1e-6
    u1 = v_rel / np.where(ok, vn, 1.0)[:, None]
    u3 = up - np.sum(up * u1, axis=1)[:, None] * u1
    n3 = np.linalg.norm(u3, axis=1)
    planar = ok & (n3 > 1e-9)
    u3 = u3 / np.where(planar, n3, 1.0)[:, None]
    u2 = np.cross(u3, u1)
    c1 = np.sum(e_t * u1, axis=1)
    alpha = np.arctan2(np.sum(e_t * u3, axis=1), c1)
    beta = np.arcsin(np.clip(np.sum(e_t * u2, axis=1), -1.0, 1.0))
    # relative wind along the vertical: only the total angle is defined
    vertical = ok & ~planar
    alpha = np.where(vertical, np.arccos(np.clip(c1, -1.0, 1.0)), alpha)
    beta = np.where(vertical, 0.0, beta)
    return np.where(ok, alpha, 0.0), np.where(ok, beta, 0.0)


def derive_outputs(state, earth=EarthModel(), e_t=None):
    """Table-1 flight-status variables for one state; e_t is the current thrust axis."""
    if e_t is None:
        e_t = np.zeros(3)
    out = flight_status(state.t, state.r, state.v, e_t, earth)
    return OutputRecord(**{k: (bool(a[0]) if k == "degenerate" else float(a[0])) for k, a in out.items()})


def orbital_elements(r, v, earth=EarthModel()):
    """Classical elements from an inertial state (angles in rad, altitudes above r_eq)."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    mu = earth.mu
    rn = np.linalg.norm(r)
    vn = np.linalg.norm(v)
    if rn <= 0.0 or vn <= 0.0:
        raise ValueError("orbital elements need non-zero position and velocity")
    hvec = np.cross(r, v)
    hn = np.linalg.norm(hvec)
    if hn < 1e-10 * rn * vn:
        raise RectilinearOrbitError("rectilinear orbit: angular momentum vanishes")
    evec = np.cross(v, hvec) / mu - r / rn
    e = float(np.linalg.norm(evec))
    energy = 0.5 * vn * vn - mu / rn
    a = -mu / (2.0 * energy) if energy != 0.0 else math.inf
    inc = math.acos(max(-1.0, min(1.0, hvec[2] / hn)))
    node = np.array([-hvec[1], hvec[0], 0.0])
    nn = np.linalg.norm(node)

    equatorial = nn < 1e-11 * hn
    circular = e < 1e-11
    if equatorial:
        raan = 0.0
        node_dir = np.array([1.0, 0.0, 0.0])
    else:
        node_dir = node / nn
        raan = math.atan2(node_dir[1], node_dir[0]) % _TWO_PI
    hhat = hvec / hn
    # angles are measured in the orbital plane from the node line
    ref_y = np.cross(hhat, node_dir)
    if circular:
        argp = 0.0
        f = math.atan2(np.dot(r, ref_y), np.dot(r, node_dir)) % _TWO_PI
    else:
        argp = math.atan2(np.dot(evec, ref_y), np.dot(evec, node_dir)) % _TWO_PI
        ehat = evec / e
        f = math.atan2(np.dot(r, np.cross(hhat, ehat)), np.dot(r, ehat)) % _TWO_PI
    p = hn * hn / mu
    r_p = p / (1.0 + e)
    r_a = p / (1.0 - e) if e < 1.0 else math.inf
    return OrbitalElements(a, e, inc, raan, argp, f, r_p - earth.r_eq, r_a - earth.r_eq)


def state_from_elements(a, e, i, raan, argp, f, earth=EarthModel()):
    """Inertial (r, v) for elliptic elements; inverse of orbital_elements."""
    p = a * (1.0 - e * e)
    rn = p / (1.0 + e * math.cos(f))
    r_pf = np.array([rn * math.cos(f), rn * math.sin(f), 0.0])
    k = math.sqrt(earth.mu / p)
    v_pf = np.array([-k * math.sin(f), k * (e + math.cos(f)), 0.0])
    co, so = math.cos(raan), math.sin(raan)
    ci, si = math.cos(i), math.sin(i)
    cw, sw = math.cos(argp), math.sin(argp)
    rot = np.array(
        [
            [co * cw - so * sw * ci, -co * sw - so * cw * ci, so * si],
            [so * cw + co * sw * ci, -so * sw + co * cw * ci, -co * si],
            [sw * si, cw * si, ci],
        ]
    )
    return rot @ r_pf, rot @ v_pf


def _time_since_periapsis(f, e, p, mu):
    """Signed time from periapsis to true anomaly f in (-pi, pi] on a conic."""
    if abs(e - 1.0) < 1e-9:
        d = math.tan(0.5 * f)
        return 0.5 * math.sqrt(p**3 / mu) * (d + d**3 / 3.0)
    a = p / (1.0 - e * e)
    if e < 1.0:
        ecc = 2.0 * math.atan(math.sqrt((1.0 - e) / (1.0 + e)) * math.tan(0.5 * f))
        return math.sqrt(a**3 / mu) * (ecc - e * math.sin(ecc))
    hyp = 2.0 * math.atanh(math.sqrt((e - 1.0) / (e + 1.0)) * math.tan(0.5 * f))
    return math.sqrt((-a) ** 3 / mu) * (e * math.sinh(hyp) - hyp)


def _radial_fall_time(r0, vr0, radius, mu):
    """Time to fall to `radius` on a rectilinear (zero angular momentum) path."""
    energy = 0.5 * vr0 * vr0 - mu / r0
    if energy < 0.0:
        a = -mu / (2.0 * energy)  # apex radius is 2a
        scale = math.sqrt(a**3 / mu)

        def eta(r):
            return math.acos(max(-1.0, min(1.0, 1.0 - r / a)))

        def t_of(e_):
            return scale * (e_ - math.sin(e_))

        e0 = eta(r0)
        if vr0 < 0.0:
            e0 = _TWO_PI - e0
        e_i = _TWO_PI - eta(radius)
        return t_of(e_i) - t_of(e0)
    if vr0 >= 0.0:
        raise NoImpactError("escaping radially outward")
    a = mu / (2.0 * energy) if energy > 0.0 else None
    if a is None:
        # parabolic radial: r^(3/2) = r0^(3/2) - 1.5*sqrt(2 mu)*t
        return (r0**1.5 - radius**1.5) / (1.5 * math.sqrt(2.0 * mu))
    scale = math.sqrt(a**3 / mu)

    def t_h(r):
        e_ = math.acosh(1.0 + r / a)
        return scale * (math.sinh(e_) - e_)

    return t_h(r0) - t_h(radius)


def iip_predict(r, v, t=0.0, earth=EarthModel()):
    """Instantaneous impact point of the ballistic arc through (r, v) at epoch time t.

    The impact radius is the equatorial radius.  The impact direction follows
    in closed form from the conic; the flight time from Kepler's equation.
    The Earth-fixed impact longitude accounts for rotation until impact.
    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    mu = earth.mu
    radius = earth.r_eq
    rn = float(np.linalg.norm(r))
    vn = float(np.linalg.norm(v))
    rhat = r / rn
    vr = float(np.dot(rhat, v))
    hvec = np.cross(r, v)
    hn = float(np.linalg.norm(hvec))

    if rn <= radius and vr <= 0.0:
        t_go, r_imp = 0.0, rhat
    elif hn < 1e-9 * rn * max(vn, 1.0):
        t_go, r_imp = _radial_fall_time(rn, vr, radius, mu), rhat
    else:
        p = hn * hn / mu
        evec = np.cross(v, hvec) / mu - rhat
        e = float(np.linalg.norm(evec))
        if p / (1.0 + e) > radius:
            raise NoImpactError(f"perigee {p / (1.0 + e) - radius:.1f} m above the surface")
        # true anomalies measured in the orbit plane; the impact is the descending crossing
        cos_f0 = (p / rn - 1.0) / e
        sin_f0 = vr * hn / (mu * e)
        f0 = math.atan2(sin_f0, cos_f0)
        cos_fi = max(-1.0, min(1.0, (p / radius - 1.0) / e))
        f_i = -math.acos(cos_fi)
        if e >= 1.0 and f0 > 0.0 and vr >= 0.0:
            raise NoImpactError("hyperbolic arc receding from the Earth")
        t0 = _time_since_periapsis(f0, e, p, mu)
        t1 = _time_since_periapsis(f_i, e, p, mu)
        t_go = t1 - t0
        if vr < 0.0 and f0 >= f_i:
            # descending and at the surface to rounding: the impact is now, not one revolution later
            d_f, t_go = 0.0, 0.0
        else:
            d_f = (f_i - f0) % _TWO_PI
        if e < 1.0:
            period = _TWO_PI * math.sqrt((p / (1.0 - e * e)) ** 3 / mu)
            t_go %= period
        hhat = hvec / hn
        r_imp = math.cos(d_f) * rhat + math.sin(d_f) * np.cross(hhat, rhat)

    # earth-fixed longitude at the impact instant
    lat = math.asin(max(-1.0, min(1.0, float(r_imp[2]))))
    lon_inertial = math.atan2(r_imp[1], r_imp[0]) if abs(r_imp[2]) < 1.0 - 1e-15 else 0.0
    lon = wrap_angle(lon_inertial - earth.omega * (t + t_go))
    return IipResult(float(t_go), lat, lon)


def iip_track(traj, earth=EarthModel()):
    """IIP at every trajectory sample; NaN where no impact exists."""
    out = np.full((len(traj), 3), np.nan)
    for i in range(len(traj)):
        try:
            res = iip_predict(traj.r[i], traj.v[i], traj.t[i], earth)
        except NoImpactError:
            continue
        out[i] = (res.t_go, res.lat, res.lon)
    return out
