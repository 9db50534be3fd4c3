"""Simultaneous stage sizing and ascent shaping as one nonlinear program.

Decision vector (scaled): structural masses in Mg, then pitch and yaw nodes
(rad) at the end of every free-attitude phase.  Propellant masses follow from
the fixed structural fractions.  The program minimises lift-off mass subject
to orbit insertion, zero angle of attack in the gravity-turn phases, a
dynamic-pressure path limit and IIP bounds at separation events.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import lsq_linear, minimize

from .dynamics import MassError, ScheduleError, VehicleSpec, controls_from_free_nodes, simulate
from .earth import EarthModel, GeodeticPoint, wrap_angle
from .outputs import NoImpactError, flight_status, iip_predict, orbital_elements

log = logging.getLogger(__name__)

MASS_SCALE = 1000.0
H_SCALE = 1e5
V_SCALE = 1e3
Q_SCALE = 1e4
PENALTY = 1e3


@dataclass(frozen=True)
class IipBound:
    """Latitude/longitude window [rad] for the impact point at one separation event.

    `event` is a 1-based stage number or "fairing"; None disables a side.
    """

    event: object
    lat_min: float | None = None
    lat_max: float | None = None
    lon_min: float | None = None
    lon_max: float | None = None

    def __post_init__(self):
        for lo, hi in ((self.lat_min, self.lat_max), (self.lon_min, self.lon_max)):
            if lo is not None and hi is not None and lo > hi:
                raise ValueError(f"IIP bound for {self.event}: lower exceeds upper")


@dataclass(frozen=True)
class MissionSpec:
    h_req: float
    i_req: float
    site: GeodeticPoint
    m_payload: float
    m_fairing: float = 0.0
    gamma_req: float = 0.0
    v_i_req: float | None = None
    q_max: float | None = None
    iip_bounds: tuple = ()
    name: str = ""

    def __post_init__(self):
        if not self.h_req > 0.0:
            raise ValueError("target altitude must be positive")
        if not 0.0 <= self.i_req <= math.pi:
            raise ValueError("inclination must lie in [0, pi]")
        object.__setattr__(self, "iip_bounds", tuple(self.iip_bounds))

    def target_speed(self, earth=EarthModel()):
        if self.v_i_req is not None:
            return self.v_i_req
        return math.sqrt(earth.mu / (earth.r_eq + self.h_req))

    def launch_azimuth(self):
        """Inertial azimuth of a northbound ascending pass into the target plane."""
        s = math.cos(self.i_req) / math.cos(self.site.latitude)
        return math.asin(max(-1.0, min(1.0, s)))


@dataclass(frozen=True)
class Options:
    nodes_per_phase: int = 50
    tol: float = 1e-6
    ineq_tol: float = 1e-8
    max_iter: int = 300
    fd_step: float = 1e-6
    ftol: float = 1e-12
    polish_ftol: float = 1e-15
    # extra divisor on the Mg objective seen by SLSQP; tames its first identity-Hessian step
    # when the stage masses are free.  None: 10 when sizing stages, else 1
    objective_scale: float | None = None
    alpha_at_midpoints: bool = False
    mass_bounds: tuple = (0.25, 4.0)
    pitch_bounds: tuple = (math.radians(-90.0), math.radians(95.0))
    yaw_bounds: tuple = (math.radians(-90.0), math.radians(90.0))


@dataclass(frozen=True)
class DecisionVector:
    m_s: tuple
    theta: tuple
    psi: tuple
    m_payload: float | None = None


class Layout:
    """Packing of a DecisionVector into the scaled flat vector the solver sees.

    Masses are scaled to Mg; angles stay in radians.  Any block can be frozen
    (left out of the flat vector) for sub-problems.
    """

    def __init__(self, n_stages, n_nodes, size_stages=True, free_payload=False):
        self.n_stages = n_stages
        self.n_nodes = n_nodes
        self.size_stages = size_stages
        self.free_payload = free_payload

    @property
    def size(self):
        return (self.n_stages if self.size_stages else 0) + 2 * self.n_nodes + (1 if self.free_payload else 0)

    def pack(self, dv):
        if len(dv.theta) != self.n_nodes or len(dv.psi) != self.n_nodes:
            raise ValueError(f"expected {self.n_nodes} pitch and yaw nodes")
        parts = []
        if self.size_stages:
            if len(dv.m_s) != self.n_stages:
                raise ValueError(f"expected {self.n_stages} structural masses")
            parts.append(np.asarray(dv.m_s, dtype=float) / MASS_SCALE)
        parts += [np.asarray(dv.theta, dtype=float), np.asarray(dv.psi, dtype=float)]
        if self.free_payload:
            parts.append([dv.m_payload / MASS_SCALE])
        return np.concatenate(parts)

    def unpack(self, x, frozen=None):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ValueError(f"flat vector has shape {x.shape}, expected ({self.size},)")
        i = 0
        if self.size_stages:
            m_s = tuple(x[: self.n_stages] * MASS_SCALE)
            i = self.n_stages
        else:
            m_s = frozen.m_s
        theta = tuple(x[i : i + self.n_nodes])
        psi = tuple(x[i + self.n_nodes : i + 2 * self.n_nodes])
        m_pl = x[-1] * MASS_SCALE if self.free_payload else (frozen.m_payload if frozen else None)
        return DecisionVector(m_s, theta, psi, m_pl)


def pack(m_s, theta, psi):
    return Layout(len(m_s), len(theta)).pack(DecisionVector(tuple(m_s), tuple(theta), tuple(psi)))


def unpack(x, n_stages):
    n_nodes = (len(x) - n_stages) // 2
    if n_stages + 2 * n_nodes != len(x):
        raise ValueError("flat vector length does not split into masses and node pairs")
    return Layout(n_stages, n_nodes).unpack(x)


@dataclass
class Evaluation:
    objective: float
    eq: np.ndarray
    ineq: np.ndarray
    trajectory: object = None
    vehicle: VehicleSpec | None = None
    failed: str | None = None
    info: dict = field(default_factory=dict)


class Problem:
    """The NLP: objective and constraint residuals of a decision vector.

    `objective` is in kg; `eq` and `ineq` (feasible when <= 0) are scaled.
    With size_stages=False the stage masses are frozen at the template's and,
    with free_payload=True, the payload mass becomes a variable to maximise.
    """

    def __init__(self, mission, vehicle, schedule, earth=EarthModel(), options=Options(),
                 size_stages=True, free_payload=False):
        self.mission = mission
        self.template = vehicle
        self.schedule = tuple(schedule)
        self.earth = earth
        self.options = options
        self.free_nodes = [p for p, ph in enumerate(self.schedule) if ph.free_attitude]
        self.layout = Layout(vehicle.n_stages, len(self.free_nodes), size_stages, free_payload)
        self.azimuth = mission.launch_azimuth()
        self.v_req = mission.target_speed(earth)
        self._frozen = DecisionVector(
            tuple(s.m_s for s in vehicle.stages), (), (), vehicle.m_payload
        )
        self._cache = {}
        n = options.nodes_per_phase
        self._alpha_nodes = self._alpha_check_offsets(n)
        self._bounds_by_event = {b.event: b for b in mission.iip_bounds}
        self.n_eq = 4 + len(self._alpha_nodes)
        self.n_ineq = None

    @property
    def size(self):
        return self.layout.size

    def _alpha_check_offsets(self, n):
        """(phase, sample offset) pairs where the gravity-turn condition is imposed."""
        pts = []
        for p, ph in enumerate(self.schedule):
            if ph.gravity_turn:
                if self.options.alpha_at_midpoints:
                    pts.append((p, n // 2))
                pts.append((p, n))
        return pts

    def pack(self, dv):
        return self.layout.pack(dv)

    def unpack(self, x):
        return self.layout.unpack(x, self._frozen)

    def vehicle_for(self, dv):
        stages = tuple(s.with_structural_mass(m) for s, m in zip(self.template.stages, dv.m_s))
        m_pl = dv.m_payload if dv.m_payload is not None else self.mission.m_payload
        return VehicleSpec(stages, m_pl, self.mission.m_fairing)

    def controls_for(self, dv):
        return controls_from_free_nodes(self.schedule, dv.theta, dv.psi, azimuth=self.azimuth)

    def bounds(self):
        o = self.options
        b = []
        if self.layout.size_stages:
            b += [(s.m_s * o.mass_bounds[0] / MASS_SCALE, s.m_s * o.mass_bounds[1] / MASS_SCALE) for s in self.template.stages]
        b += [o.pitch_bounds] * self.layout.n_nodes + [o.yaw_bounds] * self.layout.n_nodes
        if self.layout.free_payload:
            b.append((1.0 / MASS_SCALE, 10.0 * self.mission.m_payload / MASS_SCALE))
        return b

    def objective_value(self, vehicle):
        if self.layout.free_payload:
            return -vehicle.m_payload
        return vehicle.m_liftoff

    def evaluate(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        ev = self._evaluate(np.asarray(x, dtype=float))
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = ev
        return ev

    def _evaluate(self, x):
        dv = self.unpack(x)
        try:
            if any(m <= 0.0 for m in dv.m_s) or (dv.m_payload is not None and dv.m_payload <= 0.0):
                raise MassError("non-positive mass in decision vector")
            vehicle = self.vehicle_for(dv)
            traj = simulate(vehicle, self.schedule, self.controls_for(dv), self.earth, self.mission.site,
                            self.options.nodes_per_phase)
            return self._residuals(vehicle, traj)
        except (MassError, ScheduleError, NoImpactError, FloatingPointError, ValueError) as exc:
            log.debug("evaluation failed: %s", exc)
            return self._failed(dv, str(exc))

    def _failed(self, dv, reason):
        n_ineq = self.n_ineq if self.n_ineq is not None else 0
        eq = np.full(self.n_eq, 10.0)
        ineq = np.full(n_ineq, 10.0)
        try:
            obj = self.objective_value(self.vehicle_for(dv))
        except ValueError:
            obj = 0.0
        penalty = PENALTY * MASS_SCALE * (np.sum(eq**2) + np.sum(ineq**2))
        return Evaluation(obj + penalty, eq, ineq, failed=reason)

    def _residuals(self, vehicle, traj):
        earth = self.earth
        m = self.mission
        if np.any(np.linalg.norm(traj.r, axis=1) - earth.r_eq < min(0.0, m.site.altitude - 1.0)):
            raise ValueError("trajectory hits the ground")
        e_t = traj.thrust_directions()
        status = flight_status(traj.t, traj.r, traj.v, e_t, earth)

        rf, vf = traj.r[-1], traj.v[-1]
        el = orbital_elements(rf, vf, earth)
        eq = [
            (np.linalg.norm(rf) - earth.r_eq - m.h_req) / H_SCALE,
            status["gamma"][-1] - m.gamma_req,
            (np.linalg.norm(vf) - self.v_req) / V_SCALE,
            el.i - m.i_req,
        ]
        alpha_idx = [traj.phase_slices[p].start + k for p, k in self._alpha_nodes]
        eq += list(status["alpha"][alpha_idx])

        ineq = []
        if m.q_max is not None:
            ineq += list((status["q"] - m.q_max) / Q_SCALE)
        iips = {}
        for p, ph in enumerate(self.schedule):
            events = []
            if ph.separates_stage is not None:
                events.append(ph.separates_stage + 1)
            if ph.fairing_separation:
                events.append("fairing")
            for ev in events:
                end = traj.phase_end[p]
                iips[ev] = iip_predict(end.r, end.v, end.t, earth)
                b = self._bounds_by_event.get(ev)
                if b is None:
                    continue
                if b.lat_max is not None:
                    ineq.append(iips[ev].lat - b.lat_max)
                if b.lat_min is not None:
                    ineq.append(b.lat_min - iips[ev].lat)
                if b.lon_max is not None:
                    ineq.append(wrap_angle(iips[ev].lon - b.lon_max))
                if b.lon_min is not None:
                    ineq.append(wrap_angle(b.lon_min - iips[ev].lon))
        ineq = np.asarray(ineq, dtype=float)
        self.n_ineq = len(ineq)
        info = dict(status=status, elements=el, iip=iips, alpha_index=alpha_idx)
        return Evaluation(self.objective_value(vehicle), np.asarray(eq), ineq, traj, vehicle, None, info)

    def fd_step(self, x):
        return self.options.fd_step * np.maximum(1.0, np.abs(x))

    def gradient(self, x, map_fn=map):
        """Central-difference Jacobians (objective [kg], eq, ineq) at x.

        Probe evaluations are independent and may be fanned out via map_fn.
        Where a probe fails the one-sided difference is used instead.
        """
        x = np.asarray(x, dtype=float)
        base = self.evaluate(x)
        h = self.fd_step(x)
        probes = []
        for i in range(len(x)):
            for sgn in (1.0, -1.0):
                xp = x.copy()
                xp[i] += sgn * h[i]
                probes.append(xp)
        results = list(map_fn(self.evaluate, probes))
        n = len(x)
        g = np.zeros(n)
        j_eq = np.zeros((len(base.eq), n))
        j_in = np.zeros((len(base.ineq), n))
        for i in range(n):
            plus, minus = results[2 * i], results[2 * i + 1]
            ok_p, ok_m = plus.failed is None, minus.failed is None
            if ok_p and ok_m:
                lo, hi, span = minus, plus, 2.0 * h[i]
            elif ok_p:
                lo, hi, span = base, plus, h[i]
            elif ok_m:
                lo, hi, span = minus, base, h[i]
            else:
                continue
            g[i] = (hi.objective - lo.objective) / span
            j_eq[:, i] = (hi.eq - lo.eq) / span
            if len(base.ineq):
                j_in[:, i] = (hi.ineq - lo.ineq) / span
        return g, j_eq, j_in


@dataclass
class OptimizationResult:
    decision: DecisionVector
    x: np.ndarray
    vehicle: VehicleSpec
    m_liftoff: float
    dv_k: np.ndarray
    losses: np.ndarray
    eq: np.ndarray
    ineq: np.ndarray
    status: str
    iterations: int
    wall_time: float
    trajectory: object
    kkt: float = math.nan
    message: str = ""
    evaluation: Evaluation | None = None
    violated: tuple = ()

    @property
    def total_loss(self):
        return float(np.sum(self.losses))

    @property
    def payload_ratio(self):
        return self.vehicle.m_payload / self.m_liftoff

    @property
    def converged(self):
        return self.status == "converged"


def kkt_residual(grad_f, j_eq, j_in, ineq, x=None, bounds=None, active_tol=1e-6):
    """Scaled stationarity residual with least-squares multipliers.

    Inequality (g <= 0) and active-bound multipliers are sign constrained.
    """
    n = len(grad_f)
    active = np.where(ineq > -active_tol)[0] if len(ineq) else np.array([], dtype=int)
    rows = [j_eq, j_in[active]]
    lb = [np.full(j_eq.shape[0], -np.inf), np.zeros(len(active))]
    if x is not None and bounds is not None:
        for i, (lo, hi) in enumerate(bounds):
            e = np.zeros((1, n))
            e[0, i] = 1.0
            if lo is not None and x[i] - lo <= active_tol * max(1.0, abs(lo)):
                rows.append(-e)
                lb.append(np.zeros(1))
            elif hi is not None and hi - x[i] <= active_tol * max(1.0, abs(hi)):
                rows.append(e)
                lb.append(np.zeros(1))
    a = np.vstack(rows)
    lb = np.concatenate(lb)
    if a.shape[0] == 0:
        return float(np.max(np.abs(grad_f)) / max(1.0, float(np.max(np.abs(grad_f))))), np.zeros(0)
    sol = lsq_linear(a.T, -grad_f, bounds=(lb, np.full(len(lb), np.inf)), method="bvls")
    r = grad_f + a.T @ sol.x
    return float(np.max(np.abs(r)) / max(1.0, float(np.max(np.abs(grad_f))))), sol.x


class _SolverCallbacks:
    """Adapts a Problem to SciPy's SLSQP (objective scaled to Mg, ineq sign flipped)."""

    def __init__(self, problem, map_fn=map):
        self.p = problem
        self.map_fn = map_fn
        self._jac_key = None
        self._jac = None
        self.n_jac = 0

    def _jacobians(self, x):
        key = x.tobytes()
        if key != self._jac_key:
            self._jac = self.p.gradient(x, self.map_fn)
            self._jac_key = key
            self.n_jac += 1
        return self._jac

    @property
    def _scale(self):
        s = self.p.options.objective_scale
        if s is None:
            s = 10.0 if self.p.layout.size_stages else 1.0
        return MASS_SCALE * s

    def f(self, x):
        return self.p.evaluate(x).objective / self._scale

    def df(self, x):
        return self._jacobians(x)[0] / self._scale

    def ceq(self, x):
        return self.p.evaluate(x).eq

    def dceq(self, x):
        return self._jacobians(x)[1]

    def cin(self, x):
        return -self.p.evaluate(x).ineq

    def dcin(self, x):
        return -self._jacobians(x)[2]


def solve(problem, x0, map_fn=map, callback=None):
    """Run SLSQP from x0 and classify the outcome against the KKT tolerances."""
    opts = problem.options
    start = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    base = problem.evaluate(x0)
    cb = _SolverCallbacks(problem, map_fn)
    constraints = [{"type": "eq", "fun": cb.ceq, "jac": cb.dceq}]
    if len(base.ineq):
        constraints.append({"type": "ineq", "fun": cb.cin, "jac": cb.dcin})
    with warnings.catch_warnings():
        # SLSQP may step a hair outside the box; SciPy clips and warns
        warnings.filterwarnings("ignore", message="Values in x were outside bounds")
        res = minimize(
            cb.f, x0, jac=cb.df, method="SLSQP", bounds=problem.bounds(), constraints=constraints,
            options={"maxiter": opts.max_iter, "ftol": opts.ftol}, callback=callback,
        )
    x = np.asarray(res.x, dtype=float)
    ev = problem.evaluate(x)
    g, j_eq, j_in = cb._jacobians(x)
    kkt, _ = kkt_residual(g / MASS_SCALE, j_eq, j_in, ev.ineq, x, problem.bounds())
    eq_ok = ev.failed is None and np.max(np.abs(ev.eq), initial=0.0) <= opts.tol
    in_ok = ev.failed is None and np.max(ev.ineq, initial=-np.inf) <= opts.ineq_tol
    if eq_ok and in_ok and kkt <= opts.tol:
        status = "converged"
    elif res.status == 9 or res.nit >= opts.max_iter:
        status = "max_iter"
    elif not (eq_ok and in_ok):
        status = "infeasible"
    else:
        status = "not_converged"
    violated = ()
    if ev.failed is None:
        violated = tuple(f"eq[{i}]" for i in np.where(np.abs(ev.eq) > opts.tol)[0]) + tuple(
            f"ineq[{i}]" for i in np.where(ev.ineq > opts.ineq_tol)[0]
        )
    dv = problem.unpack(x)
    traj = ev.trajectory
    vehicle = ev.vehicle if ev.vehicle is not None else problem.vehicle_for(dv)
    return OptimizationResult(
        decision=dv,
        x=x,
        vehicle=vehicle,
        m_liftoff=vehicle.m_liftoff,
        dv_k=traj.dv_stage.copy() if traj is not None else np.full(vehicle.n_stages, np.nan),
        losses=traj.loss_totals if traj is not None else np.full(4, np.nan),
        eq=ev.eq,
        ineq=ev.ineq,
        status=status,
        iterations=int(res.nit),
        wall_time=time.perf_counter() - start,
        trajectory=traj,
        kkt=kkt,
        message=str(res.message),
        evaluation=ev,
        violated=violated,
    )


def _relative_pitch(traj, idx, earth):
    vr = traj.v[idx] - np.cross([0.0, 0.0, earth.omega], traj.r[idx])
    loc = traj.frame @ vr
    return math.atan2(loc[2], math.hypot(loc[0], loc[1]))


def _turn_sweep(problem, kick, theta, psi, sweeps):
    """Set gravity-turn nodes to the relative-velocity pitch; returns the last turn pitch."""
    theta = theta.copy()
    theta[0] = kick
    m_s = tuple(s.m_s for s in problem.template.stages)
    last = -math.pi / 2
    for _ in range(sweeps):
        dv = DecisionVector(m_s, tuple(theta), tuple(psi), problem.template.m_payload)
        try:
            traj = simulate(problem.vehicle_for(dv), problem.schedule, problem.controls_for(dv),
                            problem.earth, problem.mission.site, problem.options.nodes_per_phase)
        except (MassError, ScheduleError, ValueError):
            return theta, -math.pi / 2
        for j, p in enumerate(problem.free_nodes):
            if problem.schedule[p].gravity_turn:
                theta[j] = last = _relative_pitch(traj, traj.phase_slices[p].stop - 1, problem.earth)
    return theta, last


def initial_guess(problem, sweeps=6, turn_end_pitch=math.radians(23.0)):
    """Heuristic start: linear pitch programme with gravity-turn nodes on the relative velocity.

    The pitch-over angle is bisected so the gravity turn ends near
    `turn_end_pitch`, which keeps heavy, low-thrust designs from falling over.
    Structural masses are the template's; yaw starts at zero.
    """
    n = problem.layout.n_nodes
    theta = np.radians(np.linspace(85.0, -20.0, n)) if n > 1 else np.array([math.radians(85.0)])
    psi = np.zeros(n)
    m_s = tuple(s.m_s for s in problem.template.stages)
    if any(ph.gravity_turn for ph in problem.schedule):
        lo, hi = math.radians(75.0), math.radians(89.9)
        for _ in range(20):
            mid = 0.5 * (lo + hi)
            if _turn_sweep(problem, mid, theta, psi, sweeps)[1] < turn_end_pitch:
                lo = mid
            else:
                hi = mid
        theta, _ = _turn_sweep(problem, 0.5 * (lo + hi), theta, psi, sweeps)
    lo, hi = problem.options.pitch_bounds
    return DecisionVector(m_s, tuple(np.clip(theta, lo, hi)), tuple(psi), problem.template.m_payload)


def solve_simultaneous(mission, vehicle, schedule, x0=None, options=Options(), earth=EarthModel(),
                       map_fn=map, restarts=4):
    """Size the stages and shape the ascent together.

    Without x0 the attitude nodes are first fitted on the fixed template
    vehicle (maximising payload), which gives the full problem a nearly
    feasible start.  SLSQP is then warm-restarted until the KKT check passes.
    """
    start = time.perf_counter()
    problem = Problem(mission, vehicle, schedule, earth, options)
    if x0 is None:
        guess = initial_guess(problem)
        pre = Problem(mission, vehicle, schedule, earth, options, size_stages=False, free_payload=True)
        r0 = solve(pre, pre.pack(replace(guess, m_payload=mission.m_payload)), map_fn)
        log.info("attitude pre-solve: %s, payload %.1f kg", r0.status, r0.vehicle.m_payload)
        x = problem.pack(replace(guess, theta=r0.decision.theta, psi=r0.decision.psi, m_payload=None))
    else:
        x = np.asarray(x0, dtype=float)
    iterations = 0
    for k in range(restarts + 1):
        if k == 1:
            # warm restarts: fresh BFGS model and a tighter objective-change test
            problem.options = replace(options, ftol=options.polish_ftol)
        res = solve(problem, x, map_fn)
        iterations += res.iterations
        log.info("SLSQP pass %d: %s, lift-off %.1f kg, kkt %.2e", k, res.status, res.m_liftoff, res.kkt)
        if res.converged or res.evaluation.failed is not None:
            break
        x = res.x
    res.iterations = iterations
    res.wall_time = time.perf_counter() - start
    return res
