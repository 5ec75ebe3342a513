"""Shared fixtures and the acceptance-criterion result summary."""

import numpy as np
import pytest

from tagloc.simulate import Impairments, Scenario, Trajectory, simulate
from tagloc.types import SubcarrierGrid

_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion and assert it."""

    def check(name: str, passed: bool, detail: str) -> None:
        _CRITERIA.append((name, bool(passed), detail))
        assert passed, f"{name}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'} -- {detail}")


GRID = SubcarrierGrid.regular(5.0e9, 40e6, 64)


@pytest.fixture(scope="session")
def grid():
    return GRID


@pytest.fixture(scope="session")
def static_trace():
    """Static link with default impairments at SNR 20; reused across suites."""
    sc = Scenario(
        grid=GRID,
        duration=10.0,
        receiver_traj=Trajectory.static([0.0, 0.0], 10.0),
        target_traj=Trajectory.static([8.0, 2.0], 10.0),
        impairments=Impairments(),
        noise_snr_db=20.0,
        rng_seed=1,
    )
    return simulate(sc) + (sc,)


@pytest.fixture(scope="session")
def clean_components():
    """Noiseless, impairment-free static link with per-path components."""
    sc = Scenario(
        grid=GRID,
        duration=4.0,
        receiver_traj=Trajectory.static([0.0, 0.0], 4.0),
        target_traj=Trajectory.static([8.0, 2.0], 4.0),
        impairments=Impairments.none(),
        noise_snr_db=np.inf,
        rng_seed=1,
    )
    trace, truth, ht, hb = simulate(sc, return_components=True)
    return trace, truth, ht, hb, sc
