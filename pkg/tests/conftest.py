"""Shared fixtures and the acceptance summary.

Tests marked ``@pytest.mark.criterion(n)`` feed a per-criterion
PASS/FAIL table printed at the end of the session.  A criterion with
several tests passes only if all of them pass.
"""

from __future__ import annotations

import time

import pytest

from markerqc.control import OptimizerConfig, optimize, transport_setup
from markerqc.transport import (AdiabaticProfile, build_adiabatic_schedule, simulate_transport,
                                transport_states)

_CRITERIA: dict[int, list[tuple[str, bool, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(v for k, v in item.user_properties if k == "detail")
        _CRITERIA.setdefault(marker.args[0], []).append((item.name, rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        rows = _CRITERIA[n]
        ok = all(r[1] for r in rows)
        details = " | ".join(r[2] for r in rows if r[2])
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {details}")


@pytest.fixture
def detail(request):
    """Attach a human-readable measurement to the acceptance line."""

    def add(text: str):
        request.node.user_properties.append(("detail", text))
        print(text)

    return add


# -- expensive shared runs ----------------------------------------------------

@pytest.fixture(scope="session")
def adiabatic_run():
    """Default transport step at V = 100, T = 20 on the production grid."""
    start = time.perf_counter()
    sched = build_adiabatic_schedule()
    states = transport_states(100.0)
    res = simulate_transport(sched, states, dt=1e-3)
    return sched, states, res, time.perf_counter() - start


@pytest.fixture(scope="session")
def optimized_transport():
    """Feedback optimization of the T = 5 step from the compressed adiabatic guess."""
    start = time.perf_counter()
    sched = build_adiabatic_schedule(AdiabaticProfile().compressed(5.0), check_levels=False)
    setup = transport_setup(sched, transport_states(100.0), dt=1e-3)
    res = optimize(setup.problem, setup.initial_controls, OptimizerConfig(max_iter=200, threshold=1e-4))
    return setup, res, time.perf_counter() - start
