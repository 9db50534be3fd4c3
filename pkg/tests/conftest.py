import dataclasses

import pytest

from lvopt.config import bundled, load_mission, load_vehicle
from lvopt.dynamics import default_schedule
from lvopt.earth import EarthModel


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full optimisation runs (minutes)")


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, whatever the verbosity
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in getattr(rep, "nodeid", "") or rep.when not in ("call", "setup"):
                continue
            props = dict(rep.user_properties)
            if "acceptance" in props:
                lines.append(props["acceptance"])
            elif rep.failed:
                lines.append(f"{rep.nodeid.split('::')[-1]}: FAIL ({outcome} before the checks ran)")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def earth():
    return EarthModel()


@pytest.fixture(scope="session")
def kslv2():
    return load_vehicle(bundled("kslv2.toml"))


@pytest.fixture(scope="session")
def schedule():
    return default_schedule()


def _mission(name, vehicle):
    return load_mission(bundled(name), vehicle)


@pytest.fixture(scope="session")
def case1(kslv2):
    return _mission("case1.toml", kslv2)


@pytest.fixture(scope="session")
def case2(kslv2):
    return _mission("case2.toml", kslv2)


@pytest.fixture(scope="session")
def case3(kslv2):
    return _mission("case3.toml", kslv2)


@pytest.fixture(scope="session")
def problem(kslv2, case1):
    from lvopt.optimizer import Problem
    mission, schedule = case1
    return Problem(mission, kslv2, schedule)


@pytest.fixture(scope="session")
def guess(problem):
    from lvopt.optimizer import initial_guess
    return initial_guess(problem)


@pytest.fixture(scope="session")
def near_feasible(guess, kslv2, case1):
    """Heuristic masses with attitude nodes fitted for orbit (payload maximised)."""
    from lvopt.optimizer import Problem, solve
    mission, schedule = case1
    pre = Problem(mission, kslv2, schedule, size_stages=False, free_payload=True)
    res = solve(pre, pre.pack(dataclasses.replace(guess, m_payload=mission.m_payload)))
    return dataclasses.replace(guess, theta=res.decision.theta, psi=res.decision.psi)


# full solves are shared between the unit and acceptance suites

@pytest.fixture(scope="session")
def sim_case1(kslv2, case1):
    from lvopt.optimizer import solve_simultaneous
    mission, sched = case1
    return solve_simultaneous(mission, kslv2, sched)


@pytest.fixture(scope="session")
def sim_case2(kslv2, case2):
    from lvopt.optimizer import solve_simultaneous
    mission, sched = case2
    return solve_simultaneous(mission, kslv2, sched)


@pytest.fixture(scope="session")
def sim_case3(kslv2, case3):
    from lvopt.optimizer import solve_simultaneous
    mission, sched = case3
    return solve_simultaneous(mission, kslv2, sched)


@pytest.fixture(scope="session")
def sim_insertion_only(kslv2, case1):
    """Case I without the gravity-turn condition."""
    from lvopt.optimizer import solve_simultaneous
    mission, sched = case1
    free = tuple(dataclasses.replace(p, gravity_turn=False) for p in sched)
    return solve_simultaneous(mission, kslv2, free)


@pytest.fixture(scope="session")
def seq_case1(kslv2, case1):
    from lvopt.baseline import solve_sequential
    mission, sched = case1
    return solve_sequential(mission, kslv2, sched)


@pytest.fixture(scope="session")
def seq_case2(kslv2, case2):
    from lvopt.baseline import solve_sequential
    mission, sched = case2
    return solve_sequential(mission, kslv2, sched)


@pytest.fixture(scope="session")
def seq_case3(kslv2, case3):
    from lvopt.baseline import solve_sequential
    mission, sched = case3
    return solve_sequential(mission, kslv2, sched, damping=0.0)
