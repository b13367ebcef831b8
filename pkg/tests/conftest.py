import functools

import pytest

from gaspipe.experiments import builtin_fixture, grid_truth
from gaspipe.fixtures import NAMES
from gaspipe.transcription import TimeGrid


@functools.lru_cache(maxsize=None)
def scenario(name):
    return builtin_fixture(name)[1]


@functools.lru_cache(maxsize=None)
def truth(name, source="simulator"):
    sc = scenario(name)
    return grid_truth(sc, TimeGrid(24, sc.period), source)


def grid24(name):
    return TimeGrid(24, scenario(name).period)


@pytest.fixture(params=NAMES)
def fixture_name(request):
    return request.param


@pytest.fixture
def single():
    return scenario("single-pipe")


@pytest.fixture
def four():
    return scenario("four-node")


_ACCEPTANCE = {}


def record_acceptance(number, title, passed, detail=""):
    _ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {title}: {detail}")
