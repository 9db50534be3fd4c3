"""3-DOF point-mass ascent simulation with phase events and velocity-loss bookkeeping.

The integrated state is packed as an 11-vector::

    [x, y, z, vx, vy, vz, mass, loss_pressure, loss_drag, loss_gravity, loss_tvc]

Each phase is integrated with classical RK4 on a fixed number of steps so the
trajectory is a smooth function of the stage masses and attitude nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from numba import njit
from scipy.interpolate import PchipInterpolator

from .earth import (
    EarthModel,
    _atmosphere,
    _gravity,
    atmosphere_at,
    enu_basis,
    gravity_at,
    launch_initial_state,
)

N_STATE = 11
# below this inertial speed the loss directions are undefined and taken as zero
MIN_SPEED = 1e-6
LOSS_NAMES = ("pressure", "drag", "gravity", "tvc")

# Mach -> C_D; subsonic 0.35, transonic peak 1.1, relaxing back to 0.35 by Mach 5
DEFAULT_CD_TABLE = ((0.8, 0.35), (1.2, 1.1), (2.0, 0.8), (3.0, 0.55), (5.0, 0.35))


class ScheduleError(ValueError):
    """Phase schedule inconsistent with the vehicle (e.g. more fixed burn time than propellant)."""


class MassError(ValueError):
    """Non-positive vehicle mass."""


@dataclass(frozen=True)
class StageSpec:
    v_ex: float
    mdot: float
    m_s: float
    m_p: float
    a_exit: float = 0.0
    s_ref: float = 1.0
    cd_table: tuple = DEFAULT_CD_TABLE

    def __post_init__(self):
        for name in ("v_ex", "mdot", "m_s", "m_p", "s_ref"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"StageSpec.{name} must be positive, got {getattr(self, name)}")
        if self.a_exit < 0.0:
            raise ValueError("StageSpec.a_exit must be non-negative")
        table = tuple((float(m), float(c)) for m, c in self.cd_table)
        if not table:
            raise ValueError("cd_table needs at least one breakpoint")
        machs = [m for m, _ in table]
        if any(b <= a for a, b in zip(machs, machs[1:])):
            raise ValueError("cd_table Mach values must be strictly increasing")
        object.__setattr__(self, "cd_table", table)

    @property
    def eps(self):
        return self.m_s / (self.m_s + self.m_p)

    @property
    def burn_time(self):
        return self.m_p / self.mdot

    @property
    def thrust_vac(self):
        return self.v_ex * self.mdot

    def with_structural_mass(self, m_s):
        """Resize at constant structural fraction: m_p follows from m_s."""
        eps = self.eps
        return replace(self, m_s=m_s, m_p=m_s * (1.0 - eps) / eps)


@dataclass(frozen=True)
class VehicleSpec:
    stages: tuple
    m_payload: float
    m_fairing: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("vehicle needs at least one stage")
        if not self.m_payload > 0.0:
            raise ValueError("payload mass must be positive")
        if self.m_fairing < 0.0:
            raise ValueError("fairing mass must be non-negative")

    @property
    def n_stages(self):
        return len(self.stages)

    @property
    def m_liftoff(self):
        return self.m_payload + self.m_fairing + sum(s.m_s + s.m_p for s in self.stages)

    def mass(self, active, m_p_remaining, fairing_attached):
        """Total mass with stages before `active` already dropped."""
        m = self.m_payload + (self.m_fairing if fairing_attached else 0.0)
        for k in range(active, self.n_stages):
            m += self.stages[k].m_s + m_p_remaining[k]
        return m


@dataclass(frozen=True)
class Phase:
    """One flight phase; events fire at its end.

    Burn phases either have a fixed `duration` or take `share` of the stage's
    burn time left after its fixed-duration phases.  Coast phases need a
    fixed duration.  Attitude is held at the previous node when
    `free_attitude` is false.
    """

    name: str
    stage: int | None = None
    duration: float | None = None
    share: float = 1.0
    free_attitude: bool = True
    gravity_turn: bool = False
    separates_stage: int | None = None
    fairing_separation: bool = False
    orbit_insertion: bool = False

    @property
    def is_burn(self):
        return self.stage is not None

    @property
    def end_events(self):
        events = set()
        if self.separates_stage is not None:
            events.add(f"stage_separation({self.separates_stage + 1})")
        if self.fairing_separation:
            events.add("fairing_separation")
        if self.orbit_insertion:
            events.add("orbit_insertion")
        return events


def resolve_durations(schedule, vehicle):
    """Phase durations [s]; burn phases of each stage exhaust its propellant exactly."""
    durations = [0.0] * len(schedule)
    for k, stage in enumerate(vehicle.stages):
        idx = [i for i, ph in enumerate(schedule) if ph.stage == k]
        if not idx:
            raise ScheduleError(f"stage {k + 1} has no burn phase")
        fixed = sum(schedule[i].duration for i in idx if schedule[i].duration is not None)
        flexible = [i for i in idx if schedule[i].duration is None]
        left = stage.burn_time - fixed
        if left < -1e-9 * stage.burn_time or (flexible and left <= 0.0):
            raise ScheduleError(
                f"stage {k + 1}: fixed burn phases need {fixed:.3f} s but propellant lasts {stage.burn_time:.3f} s"
            )
        if not flexible and abs(left) > 1e-9 * stage.burn_time:
            raise ScheduleError(f"stage {k + 1}: fixed burn phases do not exhaust the propellant")
        total_share = sum(schedule[i].share for i in flexible)
        for i in idx:
            ph = schedule[i]
            durations[i] = ph.duration if ph.duration is not None else left * ph.share / total_share
    for i, ph in enumerate(schedule):
        if not ph.is_burn:
            if ph.duration is None or ph.duration < 0.0:
                raise ScheduleError(f"coast phase {ph.name!r} needs a non-negative fixed duration")
            durations[i] = ph.duration
    return durations


def validate_schedule(schedule, vehicle):
    n = vehicle.n_stages
    seen_stage = -1
    separated = []
    for ph in schedule:
        if ph.is_burn:
            if not 0 <= ph.stage < n:
                raise ScheduleError(f"phase {ph.name!r} burns unknown stage {ph.stage + 1}")
            if ph.stage < seen_stage or ph.stage in separated:
                raise ScheduleError(f"phase {ph.name!r}: stage {ph.stage + 1} burns out of order")
            seen_stage = ph.stage
        if ph.separates_stage is not None:
            if ph.separates_stage != seen_stage or ph.separates_stage in separated:
                raise ScheduleError(f"phase {ph.name!r} separates a stage that is not the active one")
            separated.append(ph.separates_stage)
    if separated != list(range(len(separated))) or len(separated) < n - 1:
        raise ScheduleError("every stage but the last must be separated, in order")
    fairing = sum(ph.fairing_separation for ph in schedule)
    if fairing > 1 or (vehicle.m_fairing > 0.0 and fairing == 0):
        raise ScheduleError("fairing must be separated exactly once")
    if not schedule[-1].orbit_insertion:
        raise ScheduleError("last phase must carry the orbit_insertion event")
    resolve_durations(schedule, vehicle)


def default_schedule(
    n_stages=3,
    vertical_rise=8.0,
    pitch_over=10.0,
    sub_phases=3,
    coast=30.0,
    fairing_sub_phase=2,
):
    """Vertical rise, pitch-over, gravity-turn sub-phases of stage 1, upper-stage
    sub-phases with fairing jettison inside stage 2, and a coast before the last stage."""
    phases = [
        Phase("vertical_rise", stage=0, duration=vertical_rise, free_attitude=False),
        Phase("pitch_over", stage=0, duration=pitch_over),
    ]
    for j in range(sub_phases):
        last = j == sub_phases - 1
        phases.append(Phase(f"s1_turn{j + 1}", stage=0, gravity_turn=True, separates_stage=0 if last else None))
    for k in range(1, n_stages):
        if k == n_stages - 1 and coast is not None and n_stages > 1:
            phases.append(Phase("coast", duration=coast))
        for j in range(sub_phases):
            last = j == sub_phases - 1
            phases.append(
                Phase(
                    f"s{k + 1}_burn{j + 1}",
                    stage=k,
                    separates_stage=k if last and k < n_stages - 1 else None,
                    fairing_separation=(k == 1 and j == fairing_sub_phase - 1),
                    orbit_insertion=last and k == n_stages - 1,
                )
            )
    if n_stages == 1:
        phases[-1] = replace(phases[-1], separates_stage=None, orbit_insertion=True)
    return tuple(phases)


@dataclass(frozen=True)
class ControlProfile:
    """Attitude nodes at each phase end, linearly interpolated inside phases.

    Angles are pitch above / yaw out of the downrange-vertical plane of the
    launch frame frozen at ignition, whose downrange axis points along `azimuth`.
    """

    theta_nodes: tuple
    psi_nodes: tuple
    theta0: float = math.pi / 2
    psi0: float = 0.0
    azimuth: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta_nodes", tuple(float(a) for a in self.theta_nodes))
        object.__setattr__(self, "psi_nodes", tuple(float(a) for a in self.psi_nodes))
        if len(self.theta_nodes) != len(self.psi_nodes):
            raise ValueError("pitch and yaw node counts differ")

    def phase_endpoints(self, p):
        """(theta_start, psi_start, theta_end, psi_end) of phase p."""
        if p == 0:
            th0, ps0 = self.theta0, self.psi0
        else:
            th0, ps0 = self.theta_nodes[p - 1], self.psi_nodes[p - 1]
        return th0, ps0, self.theta_nodes[p], self.psi_nodes[p]


def controls_from_free_nodes(schedule, theta_free, psi_free, theta0=math.pi / 2, psi0=0.0, azimuth=0.0):
    """Expand nodes given only for free-attitude phases into a full ControlProfile."""
    theta, psi = [], []
    th, ps = theta0, psi0
    it = iter(zip(theta_free, psi_free))
    for ph in schedule:
        if ph.free_attitude:
            th, ps = next(it)
        theta.append(th)
        psi.append(ps)
    return ControlProfile(tuple(theta), tuple(psi), theta0, psi0, azimuth)


def launch_frame(site, azimuth, earth=EarthModel()):
    """Rows: downrange-horizontal, cross-range (z cross x), local up; ECI at epoch."""
    east, north, up = enu_basis(site.latitude, site.longitude)
    x = math.cos(azimuth) * north + math.sin(azimuth) * east
    y = np.cross(up, x)
    return np.array([x, y, up])


def thrust_direction(theta, psi, frame):
    """Unit thrust vector in ECI for pitch/yaw in the launch frame."""
    c = math.cos(psi)
    local = np.array([math.cos(theta) * c, math.sin(psi), math.sin(theta) * c])
    return local @ np.asarray(frame)


@njit(cache=True)
def _cd(mach, cd):
    # cd rows: mach, value, slope; cubic Hermite keeps C_D continuously differentiable
    n = cd.shape[0]
    if mach <= cd[0, 0]:
        return cd[0, 1]
    if mach >= cd[n - 1, 0]:
        return cd[n - 1, 1]
    i = 1
    while cd[i, 0] < mach:
        i += 1
    h = cd[i, 0] - cd[i - 1, 0]
    s = (mach - cd[i - 1, 0]) / h
    s2 = s * s
    s3 = s2 * s
    return ((2 * s3 - 3 * s2 + 1) * cd[i - 1, 1] + (s3 - 2 * s2 + s) * h * cd[i - 1, 2]
            + (-2 * s3 + 3 * s2) * cd[i, 1] + (s3 - s2) * h * cd[i, 2])


@njit(cache=True)
def _rates(t, y, out, params, cd, frame):
    # params: burning, v_ex, mdot, a_exit, s_ref, t0, dur, th0, ps0, th1, ps1, mu, r_eq, j2, omega
    burning = params[0] > 0.5
    v_ex, mdot, a_exit, s_ref = params[1], params[2], params[3], params[4]
    mu, r_eq, j2, omega = params[11], params[12], params[13], params[14]
    x, yy, z = y[0], y[1], y[2]
    vx, vy, vz = y[3], y[4], y[5]
    m = y[6]
    rn = math.sqrt(x * x + yy * yy + z * z)
    temp, p, rho, a_sound = _atmosphere(rn - r_eq)

    vrx = vx + omega * yy
    vry = vy - omega * x
    vrz = vz
    vr = math.sqrt(vrx * vrx + vry * vry + vrz * vrz)
    drag = 0.0
    if rho > 0.0 and vr > 0.0:
        drag = 0.5 * rho * _cd(vr / a_sound, cd) * s_ref * vr * vr
    gx, gy, gz = _gravity(x, yy, z, mu, r_eq, j2)

    ax, ay, az = gx, gy, gz
    if drag > 0.0:
        k = drag / (m * vr)
        ax -= k * vrx
        ay -= k * vry
        az -= k * vrz

    v = math.sqrt(vx * vx + vy * vy + vz * vz)
    thrust = 0.0
    cos_delta = 1.0
    if burning:
        dur = params[6]
        s = (t - params[5]) / dur if dur > 0.0 else 1.0
        s = min(max(s, 0.0), 1.0)
        th = params[7] + s * (params[9] - params[7])
        ps = params[8] + s * (params[10] - params[8])
        cp = math.cos(ps)
        lx, ly, lz = math.cos(th) * cp, math.sin(ps), math.sin(th) * cp
        ex = lx * frame[0, 0] + ly * frame[1, 0] + lz * frame[2, 0]
        ey = lx * frame[0, 1] + ly * frame[1, 1] + lz * frame[2, 1]
        ez = lx * frame[0, 2] + ly * frame[1, 2] + lz * frame[2, 2]
        thrust = v_ex * mdot - a_exit * p
        ax += thrust * ex / m
        ay += thrust * ey / m
        az += thrust * ez / m
        if v > MIN_SPEED:
            cos_delta = (ex * vx + ey * vy + ez * vz) / v

    # drag and gravity losses are their components along the inertial velocity
    drag_along = 0.0
    grav_along = 0.0
    if v > MIN_SPEED:
        if drag > 0.0:
            drag_along = drag * (vrx * vx + vry * vy + vrz * vz) / (vr * v)
        grav_along = -(gx * vx + gy * vy + gz * vz) / v

    out[0] = vx
    out[1] = vy
    out[2] = vz
    out[3] = ax
    out[4] = ay
    out[5] = az
    out[6] = -mdot if burning else 0.0
    out[7] = p * a_exit / m if burning else 0.0
    out[8] = drag_along / m
    out[9] = grav_along
    out[10] = thrust * (1.0 - cos_delta) / m


@njit(cache=True)
def _rk4_phase(y0, t0, n_steps, params, cd, frame):
    dur = params[6]
    h = dur / n_steps
    ys = np.empty((n_steps + 1, N_STATE))
    ys[0] = y0
    k1 = np.empty(N_STATE)
    k2 = np.empty(N_STATE)
    k3 = np.empty(N_STATE)
    k4 = np.empty(N_STATE)
    tmp = np.empty(N_STATE)
    y = y0.copy()
    for i in range(n_steps):
        t = t0 + i * h
        _rates(t, y, k1, params, cd, frame)
        for j in range(N_STATE):
            tmp[j] = y[j] + 0.5 * h * k1[j]
        _rates(t + 0.5 * h, tmp, k2, params, cd, frame)
        for j in range(N_STATE):
            tmp[j] = y[j] + 0.5 * h * k2[j]
        _rates(t + 0.5 * h, tmp, k3, params, cd, frame)
        for j in range(N_STATE):
            tmp[j] = y[j] + h * k3[j]
        _rates(t + h, tmp, k4, params, cd, frame)
        for j in range(N_STATE):
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        ys[i + 1] = y
    return ys


@dataclass(frozen=True)
class StateVector:
    t: float
    r: np.ndarray
    v: np.ndarray
    m_p_remaining: tuple
    fairing_attached: bool
    losses: tuple = (0.0, 0.0, 0.0, 0.0)
    stage: int = 0
    burning: bool = False
    mass: float | None = None

    def packed(self, vehicle=None):
        m = self.mass if self.mass is not None else vehicle.mass(self.stage, self.m_p_remaining, self.fairing_attached)
        return np.concatenate([self.r, self.v, [m], self.losses])


class StateRate(NamedTuple):
    dr: np.ndarray
    dv: np.ndarray
    dm_p: np.ndarray
    dlosses: np.ndarray


def _phase_params(burning, stage, t0, dur, attitude, earth):
    th0, ps0, th1, ps1 = attitude
    return np.array(
        [
            1.0 if burning else 0.0,
            stage.v_ex,
            stage.mdot,
            stage.a_exit,
            stage.s_ref,
            t0,
            dur,
            th0,
            ps0,
            th1,
            ps1,
            earth.mu,
            earth.r_eq,
            earth.j2,
            earth.omega,
        ]
    )


def _cd_arrays(stage):
    """(n, 3) rows of Mach, C_D and monotone-cubic slope; flat outside the table."""
    table = np.asarray(stage.cd_table, dtype=float)
    out = np.zeros((len(table), 3))
    out[:, :2] = table
    if len(table) > 1:
        out[:, 2] = PchipInterpolator(table[:, 0], table[:, 1]).derivative()(table[:, 0])
        # zero end slopes join the constant extrapolation smoothly
        out[0, 2] = out[-1, 2] = 0.0
    return out


def _state_mass(state, vehicle):
    m = state.mass if state.mass is not None else vehicle.mass(state.stage, state.m_p_remaining, state.fairing_attached)
    if not m > 0.0:
        raise MassError(f"non-positive vehicle mass {m}")
    return m


def forces(state, e_t, vehicle, earth=EarthModel()):
    """Thrust, aerodynamic and gravity forces [N] on the vehicle in ECI."""
    m = _state_mass(state, vehicle)
    stage = vehicle.stages[state.stage]
    r = np.asarray(state.r, dtype=float)
    v = np.asarray(state.v, dtype=float)
    atm = atmosphere_at(np.linalg.norm(r) - earth.r_eq)
    f_t = np.zeros(3)
    if state.burning:
        f_t = (stage.v_ex * stage.mdot - stage.a_exit * atm.pressure) * np.asarray(e_t, dtype=float)
    v_r = v - np.cross([0.0, 0.0, earth.omega], r)
    speed = np.linalg.norm(v_r)
    f_a = np.zeros(3)
    if speed > 0.0 and atm.density > 0.0:
        cd = _cd(speed / atm.speed_of_sound, _cd_arrays(stage))
        f_a = -0.5 * atm.density * cd * stage.s_ref * speed * v_r
    f_g = m * gravity_at(r, earth)
    return f_t, f_a, f_g


def derivatives(state, attitude, vehicle, earth=EarthModel(), frame=None):
    """Time derivative of the state for a (theta, psi) attitude held over the instant."""
    m = _state_mass(state, vehicle)
    frame = np.eye(3) if frame is None else np.asarray(frame, dtype=float)
    stage = vehicle.stages[state.stage]
    theta, psi = attitude
    params = _phase_params(state.burning, stage, state.t, 0.0, (theta, psi, theta, psi), earth)
    cd = _cd_arrays(stage)
    y = np.concatenate([state.r, state.v, [m], state.losses]).astype(float)
    out = np.empty(N_STATE)
    _rates(state.t, y, out, params, cd, np.ascontiguousarray(frame))
    dm_p = np.zeros(vehicle.n_stages)
    dm_p[state.stage] = out[6]
    return StateRate(out[0:3], out[3:6], dm_p, out[7:11])


@dataclass
class Trajectory:
    """Dense samples (one per node, strictly increasing in time) plus phase bookkeeping."""

    t: np.ndarray
    r: np.ndarray
    v: np.ndarray
    mass: np.ndarray
    losses: np.ndarray
    m_prop: np.ndarray
    fairing: np.ndarray
    phase: np.ndarray
    stage: np.ndarray
    burning: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    frame: np.ndarray
    phase_start: list
    phase_end: list
    phase_slices: list
    dv_stage: np.ndarray
    schedule: tuple = field(repr=False, default=())

    @property
    def loss_totals(self):
        return self.losses[-1].copy()

    @property
    def total_loss(self):
        return float(self.losses[-1].sum())

    def __len__(self):
        return self.t.shape[0]

    def state(self, i):
        return StateVector(
            t=float(self.t[i]),
            r=self.r[i].copy(),
            v=self.v[i].copy(),
            m_p_remaining=tuple(self.m_prop[i]),
            fairing_attached=bool(self.fairing[i]),
            losses=tuple(self.losses[i]),
            stage=int(self.stage[i]),
            burning=bool(self.burning[i]),
            mass=float(self.mass[i]),
        )

    def thrust_directions(self):
        c = np.cos(self.psi)
        local = np.stack([np.cos(self.theta) * c, np.sin(self.psi), np.sin(self.theta) * c], axis=1)
        return local @ self.frame


def _integrate(y0, t0, phase, dur, attitude, stage, earth, frame, n_steps):
    params = _phase_params(phase.is_burn, stage, t0, dur, attitude, earth)
    cd = _cd_arrays(stage)
    return _rk4_phase(np.asarray(y0, dtype=float), float(t0), int(n_steps), params, cd, frame)


def integrate_phase(state0, phase, attitude, vehicle, earth=EarthModel(), frame=None, nodes=50, duration=None):
    """Integrate one phase from state0; returns nodes + 1 states.

    `attitude` is (theta_start, psi_start, theta_end, psi_end).  Burn phases
    default to the whole remaining propellant of their stage.
    """
    frame = np.eye(3) if frame is None else np.ascontiguousarray(frame, dtype=float)
    k = phase.stage if phase.is_burn else state0.stage
    stage = vehicle.stages[k]
    m0 = _state_mass(state0, vehicle)
    if duration is None:
        duration = phase.duration if phase.duration is not None else state0.m_p_remaining[k] / stage.mdot
    if phase.is_burn and stage.mdot * duration > state0.m_p_remaining[k] * (1.0 + 1e-9):
        raise MassError(f"phase {phase.name!r} burns more propellant than stage {k + 1} holds")
    y0 = np.concatenate([state0.r, state0.v, [m0], state0.losses])
    ys = _integrate(y0, state0.t, phase, duration, attitude, stage, earth, frame, nodes)
    h = duration / nodes
    states = []
    for i, y in enumerate(ys):
        mp = list(state0.m_p_remaining)
        if phase.is_burn:
            mp[k] = max(state0.m_p_remaining[k] - stage.mdot * i * h, 0.0)
        states.append(
            StateVector(
                t=state0.t + i * h,
                r=y[0:3].copy(),
                v=y[3:6].copy(),
                m_p_remaining=tuple(mp),
                fairing_attached=state0.fairing_attached,
                losses=tuple(y[7:11]),
                stage=k,
                burning=phase.is_burn,
                mass=float(y[6]),
            )
        )
    return states


def simulate(vehicle, schedule, controls, earth=EarthModel(), site=None, nodes_per_phase=50):
    """Fly the whole schedule from the pad and return the dense trajectory."""
    if site is None:
        raise ValueError("a launch site is required")
    if len(controls.theta_nodes) != len(schedule):
        raise ValueError(f"need {len(schedule)} attitude nodes, got {len(controls.theta_nodes)}")
    durations = resolve_durations(schedule, vehicle)
    frame = np.ascontiguousarray(launch_frame(site, controls.azimuth, earth))
    r0, v0 = launch_initial_state(site, earth)

    n_stages = vehicle.n_stages
    m_prop = [s.m_p for s in vehicle.stages]
    fairing = vehicle.m_fairing > 0.0
    active = 0
    y = np.concatenate([r0, v0, [vehicle.m_liftoff], np.zeros(4)])
    t = 0.0
    dv_stage = np.zeros(n_stages)

    blocks, phase_start, phase_end, slices = [], [], [], []
    meta = {k: [] for k in ("m_prop", "fairing", "phase", "stage", "burning", "theta", "psi")}
    count = 0
    for p, (ph, dur) in enumerate(zip(schedule, durations)):
        k = ph.stage if ph.is_burn else active
        if ph.is_burn:
            active = ph.stage
        stage = vehicle.stages[k]
        attitude = controls.phase_endpoints(p)
        n = nodes_per_phase
        ys = _integrate(y, t, ph, dur, attitude, stage, earth, frame, n)
        steps = np.arange(n + 1)
        tt = t + steps * (dur / n)

        mp = np.tile(np.asarray(m_prop, dtype=float), (n + 1, 1))
        if ph.is_burn:
            mp[:, k] = np.maximum(m_prop[k] - stage.mdot * (tt - t), 0.0)
            dv_stage[k] += stage.v_ex * math.log(ys[0, 6] / ys[-1, 6])
        s = steps / n
        th = attitude[0] + s * (attitude[2] - attitude[0])
        ps = attitude[1] + s * (attitude[3] - attitude[1])

        start = StateVector(t, ys[0, 0:3].copy(), ys[0, 3:6].copy(), tuple(mp[0]), fairing, tuple(ys[0, 7:]), k, ph.is_burn, float(ys[0, 6]))
        end = StateVector(tt[-1], ys[-1, 0:3].copy(), ys[-1, 3:6].copy(), tuple(mp[-1]), fairing, tuple(ys[-1, 7:]), k, ph.is_burn, float(ys[-1, 6]))
        phase_start.append(start)
        phase_end.append(end)

        first = 0 if p == 0 else 1
        blocks.append((tt[first:], ys[first:]))
        meta["m_prop"].append(mp[first:])
        meta["fairing"].append(np.full(n + 1 - first, fairing))
        meta["phase"].append(np.full(n + 1 - first, p))
        meta["stage"].append(np.full(n + 1 - first, k))
        meta["burning"].append(np.full(n + 1 - first, ph.is_burn))
        meta["theta"].append(th[first:])
        meta["psi"].append(ps[first:])
        slices.append(slice(count - (0 if p == 0 else 1), count + n + 1 - first))
        count += n + 1 - first

        # events at phase end
        y = ys[-1].copy()
        t = float(tt[-1])
        if ph.is_burn:
            m_prop[k] = float(mp[-1, k])
        if ph.separates_stage is not None:
            j = ph.separates_stage
            y[6] -= vehicle.stages[j].m_s + m_prop[j]
            m_prop[j] = 0.0
            active = j + 1
        if ph.fairing_separation and fairing:
            y[6] -= vehicle.m_fairing
            fairing = False
        if y[6] <= 0.0:
            raise MassError(f"non-positive mass after phase {ph.name!r}")

    tt = np.concatenate([b[0] for b in blocks])
    ys = np.concatenate([b[1] for b in blocks])
    return Trajectory(
        t=tt,
        r=ys[:, 0:3],
        v=ys[:, 3:6],
        mass=ys[:, 6],
        losses=ys[:, 7:11],
        m_prop=np.concatenate(meta["m_prop"]),
        fairing=np.concatenate(meta["fairing"]),
        phase=np.concatenate(meta["phase"]),
        stage=np.concatenate(meta["stage"]),
        burning=np.concatenate(meta["burning"]),
        theta=np.concatenate(meta["theta"]),
        psi=np.concatenate(meta["psi"]),
        frame=frame,
        phase_start=phase_start,
        phase_end=phase_end,
        phase_slices=slices,
        dv_stage=dv_stage,
        schedule=tuple(schedule),
    )
