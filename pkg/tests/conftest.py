import numpy as np
import pytest
from hypothesis import settings

from ergopt.dynamics import CircleMap, ShiftSpace
from ergopt.observables import Trig, cosine

settings.register_profile("ergopt", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("ergopt")


@pytest.fixture(scope="session")
def doubling():
    return CircleMap(2)


@pytest.fixture(scope="session")
def tripling():
    return CircleMap(3)


@pytest.fixture(scope="session")
def shift2():
    return ShiftSpace(2)


@pytest.fixture(scope="session")
def golden():
    # golden-mean subshift: no two consecutive 1s
    return ShiftSpace(2, ((1, 1), (1, 0)))


def trig_family():
    """Small deterministic family of trigonometric test observables."""
    fams = [cosine(th) for th in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)]
    fams.append(Trig([(1, 1.0, 0.0), (2, 0.3, 0.2)]))
    fams.append(Trig([(1, 0.2, 0.7), (3, 0.1, -0.15)]))
    return fams


def random_trig(rng, degree=5):
    k = int(rng.integers(1, degree + 1))
    terms = [(j, float(rng.normal()), float(rng.normal())) for j in range(1, k + 1)]
    return Trig(terms)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
