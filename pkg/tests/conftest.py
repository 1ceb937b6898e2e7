import numpy as np
import pytest

from treegibbs.model import make_colorings, make_hardcore, make_ising, make_potts
from treegibbs.tree import BoundaryCondition, TreeTopology

ACCEPTANCE_LINES: list[str] = []


def small_instances():
    """(label, model, tree, boundary) for every model family on tiny trees."""
    out = []
    for depth in (0, 1, 2):
        t = TreeTopology(2, depth)
        m = make_ising(0.8, 0.2)
        out.append((f"ising-plus-{depth}", m, t, BoundaryCondition.plus(m, t)))
        out.append((f"ising-free-{depth}", m, t, BoundaryCondition.free()))
        h = make_hardcore(1.5)
        out.append((f"hardcore-even-{depth}", h, t, BoundaryCondition.even(t)))
        out.append((f"hardcore-odd-{depth}", h, t, BoundaryCondition.odd(t)))
        p = make_potts(3, 0.7)
        out.append((f"potts-color1-{depth}", p, t, BoundaryCondition.color(t, 1)))
        c = make_colorings(4)
        out.append((f"colorings-color2-{depth}", c, t, BoundaryCondition.color(t, 2)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
