"""Earth environment: constants, J2 gravity, USSA76 atmosphere and frame transforms.

Geodesy is spherical (geocentric latitude, altitude above the equatorial
radius); J2 only enters the gravity model.  The ECI frame coincides with
ECEF at the epoch t = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

MU_EARTH = 3.986004418e14
R_EQ = 6378137.0
J2 = 1.08263e-3
OMEGA_EARTH = 7.2921159e-5
G0 = 9.80665

GAMMA_AIR = 1.4
R_AIR = 287.053

# USSA76 layers up to 86 km geometric (84.852 km geopotential)
_R0_GEOPOTENTIAL = 6356766.0
_LAYER_BASE_H = np.array([0.0, 11000.0, 20000.0, 32000.0, 47000.0, 51000.0, 71000.0, 84852.0])
_LAYER_BASE_T = np.array([288.15, 216.65, 216.65, 228.65, 270.65, 270.65, 214.65, 186.946])
_LAYER_LAPSE = np.array([-0.0065, 0.0, 0.001, 0.0028, 0.0, -0.0028, -0.002, 0.0])
_LAYER_BASE_P = np.empty(8)
VACUUM_ALTITUDE = 86000.0
TAPER_WIDTH = 1000.0


def _layer_pressures():
    # integrate the hydrostatic equation layer by layer so the profile is continuous
    g_over_r = G0 / R_AIR
    _LAYER_BASE_P[0] = 101325.0
    for i in range(7):
        dh = _LAYER_BASE_H[i + 1] - _LAYER_BASE_H[i]
        tb, lapse = _LAYER_BASE_T[i], _LAYER_LAPSE[i]
        if lapse == 0.0:
            _LAYER_BASE_P[i + 1] = _LAYER_BASE_P[i] * math.exp(-g_over_r * dh / tb)
        else:
            _LAYER_BASE_P[i + 1] = _LAYER_BASE_P[i] * ((tb + lapse * dh) / tb) ** (-g_over_r / lapse)


_layer_pressures()


class DegenerateRadiusError(ValueError):
    """Position too close to the Earth's centre for the gravity model."""


@dataclass(frozen=True)
class EarthModel:
    mu: float = MU_EARTH
    r_eq: float = R_EQ
    j2: float = J2
    omega: float = OMEGA_EARTH
    g0: float = G0

    def __post_init__(self):
        for name in ("mu", "r_eq", "omega", "g0"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"EarthModel.{name} must be positive")
        if not 0.0 <= self.j2 < 0.01:
            raise ValueError("EarthModel.j2 must lie in [0, 0.01)")


@dataclass(frozen=True)
class AtmosphereSample:
    temperature: float
    pressure: float
    density: float
    speed_of_sound: float


@dataclass(frozen=True)
class GeodeticPoint:
    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self):
        if not -math.pi / 2 <= self.latitude <= math.pi / 2:
            raise ValueError(f"latitude {self.latitude} rad outside [-pi/2, pi/2]")
        object.__setattr__(self, "longitude", wrap_angle(self.longitude))

    @classmethod
    def from_degrees(cls, lat_deg, lon_deg, altitude=0.0):
        return cls(math.radians(lat_deg), math.radians(lon_deg), altitude)


def wrap_angle(angle):
    """Map an angle to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@njit(cache=True)
def _atmosphere(altitude):
    """Return (T, p, rho, a) for a geometric altitude in metres."""
    z = altitude if altitude > 0.0 else 0.0
    if z >= VACUUM_ALTITUDE:
        t = _LAYER_BASE_T[7]
        return t, 0.0, 0.0, math.sqrt(GAMMA_AIR * R_AIR * t)
    h = _R0_GEOPOTENTIAL * z / (_R0_GEOPOTENTIAL + z)
    i = 0
    while i < 6 and h >= _LAYER_BASE_H[i + 1]:
        i += 1
    tb = _LAYER_BASE_T[i]
    lapse = _LAYER_LAPSE[i]
    dh = h - _LAYER_BASE_H[i]
    if lapse == 0.0:
        t = tb
        p = _LAYER_BASE_P[i] * math.exp(-G0 * dh / (R_AIR * tb))
    else:
        t = tb + lapse * dh
        p = _LAYER_BASE_P[i] * (t / tb) ** (-G0 / (R_AIR * lapse))
    if z > VACUUM_ALTITUDE - TAPER_WIDTH:
        # smoothstep down to the cutoff so fixed-step integration stays differentiable across it
        u = (VACUUM_ALTITUDE - z) / TAPER_WIDTH
        p *= u * u * (3.0 - 2.0 * u)
    return t, p, p / (R_AIR * t), math.sqrt(GAMMA_AIR * R_AIR * t)


@njit(cache=True)
def _atmosphere_array(altitude):
    n = altitude.shape[0]
    out = np.empty((n, 4))
    for k in range(n):
        t, p, rho, a = _atmosphere(altitude[k])
        out[k, 0] = t
        out[k, 1] = p
        out[k, 2] = rho
        out[k, 3] = a
    return out


def atmosphere_at(altitude):
    """USSA76 sample at a geometric altitude [m]; vacuum from 86 km, sea level below 0.

    Pressure and density are blended smoothly to zero over the kilometre below
    the cutoff.
    """
    t, p, rho, a = _atmosphere(float(altitude))
    return AtmosphereSample(t, p, rho, a)


@njit(cache=True)
def _gravity(x, y, z, mu, r_eq, j2):
    r2 = x * x + y * y + z * z
    r = math.sqrt(r2)
    central = -mu / (r2 * r)
    k = -1.5 * j2 * mu * r_eq * r_eq / (r2 * r2 * r)
    s = 5.0 * z * z / r2
    return (
        central * x + k * x * (1.0 - s),
        central * y + k * y * (1.0 - s),
        central * z + k * z * (3.0 - s),
    )


def gravity_at(r, earth=EarthModel()):
    """Central plus J2 gravitational acceleration at an inertial position [m/s^2]."""
    x, y, z = (float(c) for c in r)
    if math.sqrt(x * x + y * y + z * z) <= 0.5 * earth.r_eq:
        raise DegenerateRadiusError("position inside half the equatorial radius")
    return np.array(_gravity(x, y, z, earth.mu, earth.r_eq, earth.j2))


def _rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def eci_to_ecef(r, v, t, earth=EarthModel()):
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.array([0.0, 0.0, earth.omega])
    rot = _rot_z(earth.omega * t)
    return rot @ r, rot @ (v - np.cross(w, r))


def ecef_to_eci(r, v, t, earth=EarthModel()):
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.array([0.0, 0.0, earth.omega])
    rot = _rot_z(earth.omega * t).T
    r_eci = rot @ r
    return r_eci, rot @ v + np.cross(w, r_eci)


def ecef_to_geodetic(r_ecef, earth=EarthModel()):
    """Spherical-Earth latitude/longitude/altitude of an ECEF position.

    On the polar axis the longitude is reported as 0.
    """
    x, y, z = (float(c) for c in r_ecef)
    rn = math.sqrt(x * x + y * y + z * z)
    if rn == 0.0:
        raise ValueError("zero position vector has no geodetic coordinates")
    lat = math.asin(max(-1.0, min(1.0, z / rn)))
    lon = math.atan2(y, x) if (x != 0.0 or y != 0.0) else 0.0
    return GeodeticPoint(lat, lon, rn - earth.r_eq)


def geodetic_to_ecef(point, earth=EarthModel()):
    rn = earth.r_eq + point.altitude
    cl = math.cos(point.latitude)
    return np.array(
        [rn * cl * math.cos(point.longitude), rn * cl * math.sin(point.longitude), rn * math.sin(point.latitude)]
    )


def enu_basis(latitude, longitude):
    """Rows are the east, north and up unit vectors expressed in ECEF."""
    sl, cl = math.sin(latitude), math.cos(latitude)
    so, co = math.sin(longitude), math.cos(longitude)
    return np.array([[-so, co, 0.0], [-sl * co, -sl * so, cl], [cl * co, cl * so, sl]])


def launch_initial_state(site, earth=EarthModel()):
    """Inertial position and velocity of a surface-fixed site at the epoch."""
    r = geodetic_to_ecef(site, earth)
    v = np.cross([0.0, 0.0, earth.omega], r)
    return r, v
