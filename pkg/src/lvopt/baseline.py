"""The traditional sequential design loop used as the comparison baseline.

Stages are sized by the loss-free optimum, each stage's share is padded with
the velocity loss attributed to it, and an attitude-only trajectory
optimisation with frozen stage masses reports the payload the design can
actually carry together with new losses.  The two steps alternate until the
lift-off mass of the sized vehicle settles.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import VehicleSpec
from .earth import EarthModel
from .optimizer import DecisionVector, Options, Problem, initial_guess, solve
from .staging import StagingError, StagingProblem, StagingSolution, optimal_staging, required_dv, staging_for_dv

log = logging.getLogger(__name__)

CONVERGENCE = 1e-3
GROWTH_LIMIT = 3


def attribute_losses(trajectory):
    """Split the accumulated velocity losses among the stages.

    Losses gathered while coasting count against the next stage to burn; a
    trailing coast goes to the last stage.  The buckets sum to the total loss.
    """
    n_stages = len(trajectory.dv_stage)
    out = np.zeros(n_stages)
    schedule = trajectory.schedule
    owner = [None] * len(schedule)
    nxt = n_stages - 1
    for p in range(len(schedule) - 1, -1, -1):
        if schedule[p].is_burn:
            nxt = schedule[p].stage
        owner[p] = nxt
    totals = trajectory.losses.sum(axis=1)
    for p, sl in enumerate(trajectory.phase_slices):
        seg = totals[sl]
        if len(seg) > 1:
            out[owner[p]] += seg[-1] - seg[0]
    # any samples outside the phase slices (none in practice) keep the partition exact
    out[-1] += (totals[-1] - totals[0]) - out.sum()
    return out


@dataclass
class BaselineIteration:
    index: int
    assumed_losses: np.ndarray
    staging: StagingSolution
    vehicle: VehicleSpec
    payload: float
    m_liftoff_equiv: float
    computed_losses: np.ndarray
    inner_status: str
    change: float = math.nan

    @property
    def m_liftoff(self):
        """Lift-off mass of the vehicle sized for the required payload."""
        return self.vehicle.m_liftoff


@dataclass
class BaselineResult:
    iterations: list
    status: str
    vehicle: VehicleSpec | None = None
    trajectory: object = None
    inner: object = None
    wall_time: float = 0.0
    message: str = ""

    @property
    def m_liftoff(self):
        return self.iterations[-1].m_liftoff if self.iterations else math.nan

    @property
    def converged(self):
        return self.status == "converged"

    @property
    def losses(self):
        return self.inner.losses if self.inner is not None else np.full(4, np.nan)

    @property
    def total_loss(self):
        return float(np.sum(self.losses))

    @property
    def dv_k(self):
        return self.inner.dv_k if self.inner is not None else None


def _sized_vehicle(template, staging, m_payload, m_fairing):
    stages = tuple(s.with_structural_mass(m) for s, m in zip(template.stages, staging.m_s))
    return VehicleSpec(stages, m_payload, m_fairing)


def fairing_stage(schedule):
    """Index of the stage burning when the fairing is dropped, or None."""
    for ph in schedule:
        if ph.fairing_separation:
            return ph.stage
    return None


def size_with_fairing(dv_k, v_ex, eps, m_payload, m_fairing, drop_stage):
    """Size stages for prescribed delta-v when the fairing leaves during stage drop_stage.

    Stages above drop_stage carry the payload only; drop_stage and the stages
    below it also lift the fairing.  Returns a StagingSolution whose ratio is
    lift-off over payload.
    """
    n = len(dv_k)
    if drop_stage is None or m_fairing == 0.0:
        drop_stage = n - 1
    cut = drop_stage + 1
    carried = m_payload
    upper = None
    if cut < n:
        upper = staging_for_dv(dv_k[cut:], v_ex[cut:], eps[cut:], m_payload)
        carried = upper.m_liftoff
    lower = staging_for_dv(dv_k[:cut], v_ex[:cut], eps[:cut], carried + m_fairing)
    if upper is None:
        return replace(lower, ratio=lower.m_liftoff / m_payload)
    return StagingSolution(
        mu=lower.mu + upper.mu,
        dv_k=lower.dv_k + upper.dv_k,
        m_s=lower.m_s + upper.m_s,
        m_p=lower.m_p + upper.m_p,
        m_liftoff=lower.m_liftoff,
        ratio=lower.m_liftoff / m_payload,
        multiplier=math.nan,
    )


def _feasible(res):
    return res.evaluation.failed is None and not res.violated and res.vehicle.m_payload > 0.0


def _inner_solve(problem, start, options, map_fn, restarts):
    x = problem.pack(start)
    problem.options = options
    res = None
    for k in range(restarts + 1):
        if k == 1:
            problem.options = replace(options, ftol=options.polish_ftol)
        res = solve(problem, x, map_fn)
        if res.converged or res.evaluation.failed is not None:
            break
        x = res.x
    return res


def _fly(mission, vehicle, schedule, earth, options, map_fn, restarts, theta=None, psi=None):
    """Attitude-only, payload-maximising solve with the stage masses of vehicle."""
    inner = Problem(mission, vehicle, schedule, earth, options, size_stages=False, free_payload=True)
    res = None
    if theta is not None:
        res = _inner_solve(inner, DecisionVector((), theta, psi, mission.m_payload), options, map_fn, restarts)
    if res is None or not _feasible(res):
        # a cold start copes better with large jumps in stage size
        g = initial_guess(inner)
        res = _inner_solve(inner, replace(g, m_payload=mission.m_payload), options, map_fn, restarts)
    return res


def reference_losses(mission, vehicle, schedule, options=Options(), earth=EarthModel(), map_fn=map,
                     inner_restarts=2):
    """Per-stage losses of the given vehicle flown under the mission constraints.

    This is the designer's starting assumption for the sequential loop.  Returns
    zeros when the vehicle cannot fly the mission.
    """
    res = _fly(mission, vehicle, schedule, earth, options, map_fn, inner_restarts)
    if not _feasible(res):
        return np.zeros(vehicle.n_stages)
    return attribute_losses(res.trajectory)


def solve_sequential(mission, vehicle, schedule, options=Options(), earth=EarthModel(), damping=0.0,
                     max_iter=50, map_fn=map, inner_restarts=2, initial_losses=None):
    """Iterate loss-padded optimal staging against attitude-only trajectory optimisation.

    The first sizing assumes initial_losses, by default the losses of the
    given vehicle flown under the mission constraints.  The inner problem keeps
    the stage masses fixed and maximises the payload, which yields the losses
    for the next sizing.  The loop stops when the sized lift-off mass changes
    by at most 0.1 % between iterations.  Each iteration also records the
    payload-equivalent lift-off, the sized mass scaled by required/achieved
    payload.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    start = time.perf_counter()
    v_ex = tuple(s.v_ex for s in vehicle.stages)
    eps = tuple(s.eps for s in vehicle.stages)
    # the loss-free split does not depend on the carried mass
    carried = mission.m_payload + mission.m_fairing
    ideal = optimal_staging(StagingProblem(v_ex, eps, required_dv(mission.h_req, mission.site, earth), carried))
    drop = fairing_stage(schedule)
    if initial_losses is None:
        assumed = reference_losses(mission, vehicle, schedule, options, earth, map_fn, inner_restarts)
    else:
        assumed = np.asarray(initial_losses, dtype=float).copy()
        if assumed.shape != (vehicle.n_stages,):
            raise ValueError(f"initial_losses needs {vehicle.n_stages} entries")
    history = []
    theta = psi = None
    growth = 0
    status, message, last = "max_iter", "", None
    for it in range(1, max_iter + 1):
        try:
            staging = size_with_fairing(tuple(np.asarray(ideal.dv_k) + assumed), v_ex, eps,
                                        mission.m_payload, mission.m_fairing, drop)
        except StagingError as exc:
            status, message = "diverged", f"stage sizing failed at iteration {it}: {exc}"
            break
        sized = _sized_vehicle(vehicle, staging, mission.m_payload, mission.m_fairing)
        res = _fly(mission, sized, schedule, earth, options, map_fn, inner_restarts, theta, psi)
        payload = res.vehicle.m_payload
        feasible = _feasible(res)
        equiv = sized.m_liftoff * mission.m_payload / payload if feasible else math.nan
        computed = attribute_losses(res.trajectory) if res.trajectory is not None else np.full(vehicle.n_stages, np.nan)
        rec = BaselineIteration(it, assumed.copy(), staging, sized, payload, equiv, computed, res.status)
        if history and feasible:
            rec.change = abs(sized.m_liftoff - history[-1].m_liftoff) / history[-1].m_liftoff
        history.append(rec)
        log.info("baseline %d: lift-off %.1f kg, payload %.1f kg, change %.3g, inner %s",
                 it, sized.m_liftoff, payload, rec.change, res.status)
        last = res
        if not feasible:
            status, message = "diverged", f"trajectory sub-problem infeasible at iteration {it}"
            break
        if rec.change <= CONVERGENCE:
            status, message = "converged", f"lift-off change {rec.change:.2e} after {it} iterations"
            break
        if len(history) >= 3 and rec.change > history[-2].change:
            growth += 1
            if growth >= GROWTH_LIMIT:
                status, message = "diverged", f"lift-off change grew {GROWTH_LIMIT} times in a row (iteration {it})"
                break
        else:
            growth = 0
        theta, psi = res.decision.theta, res.decision.psi
        assumed = damping * assumed + (1.0 - damping) * computed
    if status == "max_iter":
        message = f"no convergence within {max_iter} iterations"
    final = history[-1] if history else None
    return BaselineResult(
        iterations=history,
        status=status,
        vehicle=final.vehicle if status == "converged" else None,
        trajectory=last.trajectory if status == "converged" else None,
        inner=last if status == "converged" else None,
        wall_time=time.perf_counter() - start,
        message=message,
    )

