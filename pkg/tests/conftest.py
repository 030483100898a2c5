import json
import math
from pathlib import Path

import pytest

from aubrykit.lattice import PeriodLattice
from aubrykit.potentials import TrigSeries, fk_potential

ORACLE = json.loads((Path(__file__).parent / "oracles" / "values.json").read_text())


@pytest.fixture(scope="session")
def oracle():
    return ORACLE


def fk(k, d=1):
    return fk_potential(TrigSeries.standard(k), d)


def lat1(p, q):
    return PeriodLattice([[p]], [q])


TWO_PI = 2 * math.pi

# acceptance criteria register here; the summary prints one line per criterion
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
