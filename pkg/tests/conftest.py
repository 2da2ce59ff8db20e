import functools

import pytest

from fraclqt import model, synthesis, transcribe
from fraclqt.fracops import Grid


@functools.lru_cache(maxsize=None)
def solved(name, n_steps=500):
    """Cached (problem, grid, trajectory, report) for a builtin."""
    p = model.builtin_problem(name)
    g = Grid(p.t_final, n_steps)
    traj, report = transcribe.solve(p, g)
    return p, g, traj, report


@functools.lru_cache(maxsize=None)
def synthesized(name, n_steps=500):
    """Cached (problem, grid, gains, report) for a builtin."""
    p = model.builtin_problem(name)
    g = Grid(p.t_final, n_steps)
    gains, report = synthesis.synthesize(p, g)
    return p, g, gains, report


@pytest.fixture(scope="session")
def mass_spring():
    return solved("mass_spring")


@pytest.fixture(scope="session")
def vdp_q1():
    return solved("vdp_q1")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
