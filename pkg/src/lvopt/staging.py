"""Optimal stage sizing and the serial-staging mass roll-up.

Stage k has exhaust velocity c_k, structural fraction eps_k and mass ratio
mu_k = m_initial / m_burnout.  With the Lagrange multiplier of the delta-v
constraint written as 1/x, stationarity gives

    mu_k(x) = (1 - x / c_k) / eps_k,

so the whole problem reduces to a monotone scalar root in x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .earth import EarthModel


class StagingError(ValueError):
    pass


class InfeasibleStagingError(StagingError):
    pass


@dataclass(frozen=True)
class StagingProblem:
    v_ex: tuple
    eps: tuple
    dv_req: float
    m_payload: float

    def __post_init__(self):
        object.__setattr__(self, "v_ex", tuple(float(c) for c in self.v_ex))
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        if len(self.v_ex) != len(self.eps) or not self.v_ex:
            raise StagingError("v_ex and eps must be non-empty and equally long")
        if any(c <= 0.0 for c in self.v_ex):
            raise StagingError("exhaust velocities must be positive")
        if any(not 0.0 < e < 1.0 for e in self.eps):
            raise StagingError("structural fractions must lie in (0, 1)")
        if not self.dv_req > 0.0:
            raise StagingError("required delta-v must be positive")
        if not self.m_payload > 0.0:
            raise StagingError("payload mass must be positive")

    @property
    def dv_max(self):
        return sum(c * math.log(1.0 / e) for c, e in zip(self.v_ex, self.eps))


@dataclass(frozen=True)
class StagingSolution:
    mu: tuple
    dv_k: tuple
    m_s: tuple
    m_p: tuple
    m_liftoff: float
    ratio: float
    multiplier: float


def _check_domain(mu, eps):
    if len(mu) != len(eps):
        raise StagingError("mu and eps lengths differ")
    for k, (m, e) in enumerate(zip(mu, eps)):
        if not 0.0 < e < 1.0:
            raise StagingError(f"stage {k + 1}: eps={e} outside (0, 1)")
        if m * e >= 1.0:
            raise StagingError(f"stage {k + 1}: mu*eps = {m * e:.6g} >= 1, stage mass unbounded")
        if m < 1.0:
            raise StagingError(f"stage {k + 1}: mass ratio {m} below 1")


def liftoff_ratio(mu, eps):
    """m_liftoff / m_payload for serial stages."""
    _check_domain(mu, eps)
    ratio = 1.0
    for m, e in zip(mu, eps):
        ratio *= m * (1.0 - e) / (1.0 - m * e)
    return ratio


def mass_rollup(mu, eps, m_payload):
    """Top-down stage masses.

    Returns (m_s, m_p, m_i, m_liftoff) with per-stage lists ordered
    bottom stage first; m_i[k] is the initial mass when stage k ignites.
    """
    _check_domain(mu, eps)
    n = len(mu)
    m_s, m_p, m_i = [0.0] * n, [0.0] * n, [0.0] * n
    carried = m_payload
    for k in range(n - 1, -1, -1):
        m_i[k] = carried * mu[k] * (1.0 - eps[k]) / (1.0 - mu[k] * eps[k])
        stage = m_i[k] - carried
        m_s[k] = eps[k] * stage
        m_p[k] = stage - m_s[k]
        carried = m_i[k]
    return m_s, m_p, m_i, m_i[0]


def _mu_of_x(x, v_ex, eps):
    # stationary point, clamped at mu = 1 where the bound on an empty stage is active
    return [max(1.0, (1.0 - x / c) / e) for c, e in zip(v_ex, eps)]


def _dv_of_mu(mu, v_ex):
    return sum(c * math.log(m) for c, m in zip(v_ex, mu))


def optimal_staging(problem, tol=1e-12):
    """Maximise the payload ratio subject to the delta-v requirement."""
    v_ex, eps = problem.v_ex, problem.eps
    if problem.dv_req >= problem.dv_max:
        raise InfeasibleStagingError(
            f"required {problem.dv_req:.1f} m/s exceeds the zero-payload limit {problem.dv_max:.1f} m/s"
        )
    # every stage is empty once x >= c_k (1 - eps_k) for all k
    hi = max(c * (1.0 - e) for c, e in zip(v_ex, eps))
    if _dv_of_mu(_mu_of_x(hi, v_ex, eps), v_ex) > problem.dv_req:
        raise StagingError("bracket failure: the delta-v sum does not vanish at the upper bracket")
    lo = 0.0  # mu_k -> 1/eps_k, infinite mass
    target = problem.dv_req
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        resid = _dv_of_mu(_mu_of_x(mid, v_ex, eps), v_ex) - target
        if abs(resid) <= tol * target or mid in (lo, hi):
            break
        if resid > 0.0:
            lo = mid
        else:
            hi = mid
    mu = _mu_of_x(mid, v_ex, eps)
    return staging_solution(mu, eps, v_ex, problem.m_payload, multiplier=1.0 / mid)


def staging_solution(mu, eps, v_ex, m_payload, multiplier=math.nan):
    m_s, m_p, _, m_liftoff = mass_rollup(mu, eps, m_payload)
    return StagingSolution(
        mu=tuple(mu),
        dv_k=tuple(c * math.log(m) for c, m in zip(v_ex, mu)),
        m_s=tuple(m_s),
        m_p=tuple(m_p),
        m_liftoff=m_liftoff,
        ratio=m_liftoff / m_payload,
        multiplier=multiplier,
    )


def staging_for_dv(dv_k, v_ex, eps, m_payload):
    """Size stages that each deliver a prescribed ideal delta-v."""
    mu = [math.exp(dv / c) for dv, c in zip(dv_k, v_ex)]
    return staging_solution(mu, eps, v_ex, m_payload)


def required_dv(h_target, site, earth=EarthModel()):
    """Circular-orbit speed at h_target minus the site's rotational speed."""
    v_f = math.sqrt(earth.mu / (earth.r_eq + h_target))
    v_i = earth.omega * (earth.r_eq + site.altitude) * math.cos(site.latitude)
    return v_f - v_i

