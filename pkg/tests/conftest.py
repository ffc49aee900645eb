import functools

import pytest

from lobmfg.cli import PRESETS, parse_config
from lobmfg.equilibrium import solve_equilibrium


def preset_config(name, q_max=None):
    doc = dict(PRESETS[name])
    if q_max is not None:
        doc["q_max"] = q_max
    return parse_config(doc)[0]


@functools.lru_cache(maxsize=None)
def solved(name, q_max=None):
    """Equilibrium for a preset, cached for the whole session."""
    config = preset_config(name, q_max)
    return config, solve_equilibrium(config)


@pytest.fixture(scope="session")
def small_test1():
    return solved("test1", 30.0)


@pytest.fixture(scope="session")
def small_test4():
    return solved("test4", 30.0)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
