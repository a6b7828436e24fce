import functools

import numpy as np
import pytest
from hypothesis import settings

from priorci.distributions import t_quantile
from priorci.optimizer import DesignProblem, design_d
from priorci.spline import DFunction, KnotGrid

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

FIG_KNOTS = (0.0, 1.0, 2.0, 3.0, 7.0, 12.0, 15.0)


def trivial_d(m=1, alpha=0.05, knots=FIG_KNOTS) -> DFunction:
    t = t_quantile(m, alpha)
    return DFunction(KnotGrid(knots), (t,) * (len(knots) - 1), t)


@functools.lru_cache(maxsize=None)
def optimized_design():
    """m=1, s=3, alpha=0.05, ell=1.02 on the knots 0,1,2,3,7,12,15 (about half a minute)."""
    return design_d(DesignProblem(1, 3, 0.05, 1.02, KnotGrid(FIG_KNOTS)))


@pytest.fixture(scope="session")
def design_s3():
    return optimized_design()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
