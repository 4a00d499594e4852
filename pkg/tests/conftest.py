import numpy as np
import pytest

from crowdpss.world import ArenaConfig, Controller, EpisodeContext, WorldState


def make_world(
    ego_pos=(0.5, 0.5),
    ego_goal=(2.5, 2.5),
    ego_vel=(0.0, 0.0),
    ped_pos=(),
    ped_vel=None,
    ped_goal=None,
    controller=Controller.SFM,
    controller_params=None,
    arena=None,
    step_index=0,
    horizon=100,
    seed=0,
):
    ped_pos = np.array(ped_pos, dtype=float).reshape(-1, 2)
    n = len(ped_pos)
    ped_vel = np.zeros((n, 2)) if ped_vel is None else np.array(ped_vel, dtype=float).reshape(-1, 2)
    ped_goal = ped_pos.copy() if ped_goal is None else np.array(ped_goal, dtype=float).reshape(-1, 2)
    ctx = EpisodeContext(n, horizon, seed, controller, controller_params)
    return WorldState(
        ego_pos=ego_pos, ego_vel=ego_vel, ego_goal=ego_goal,
        ped_pos=ped_pos, ped_vel=ped_vel, ped_goal=ped_goal,
        context=ctx, arena=arena or ArenaConfig(), step_index=step_index,
    )


@pytest.fixture
def world_factory():
    return make_world


# -- acceptance report: one PASS/FAIL line per criterion ---------------------

_acceptance: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if not item.nodeid.startswith("tests/test_acceptance.py") or rep.when not in ("setup", "call"):
        return
    doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
    if rep.when == "setup" and not rep.failed:
        return
    if hasattr(rep, "wasxfail"):
        status = "FAIL (expected; analysis in decisions ledger)" if rep.skipped else "PASS (unexpectedly)"
    else:
        status = "PASS" if rep.passed else "FAIL"
    _acceptance[item.name] = (doc, status)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        doc, status = _acceptance[name]
        terminalreporter.write_line(f"{status:<6} {doc}")
