from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from magnify.polymap import parse_map

ROOT = Path(__file__).resolve().parents[1]
MAPS = ROOT / "maps"

CSQ_TEXT = "dim 2\nf1 = x1^2 - x2^2\nf2 = 2*x1*x2\n"
DIAG_TEXT = "dim 2\nf1 = x1^2\nf2 = x2^2\n"
QUAD1D_TEXT = "dim 1\nf1 = x1 + x1^2\n"
CUBIC1D_TEXT = "dim 1\nf1 = x1 + x1^3\n"
PERT_TEXT = "dim 2\nf1 = x1^2 - x2^2 + 1/10*x1^3\nf2 = 2*x1*x2\n"

# ten polynomial maps of degree <= 3 and dimension <= 4, with base points
SUITE = [
    ("csq", CSQ_TEXT, [0.0, 0.0]),
    ("diag", DIAG_TEXT, [0.0, 0.0]),
    ("quad1d", QUAD1D_TEXT, [0.0]),
    ("cubic1d", CUBIC1D_TEXT, [0.0]),
    ("csq_perturbed", PERT_TEXT, [0.0, 0.0]),
    ("henon", "dim 2\nf1 = 1 - 1.4*x1^2 + x2\nf2 = 3/10*x1\n", [0.5, 0.2]),
    (
        "mixed3",
        "dim 3\nf1 = x1 + x2*x3\nf2 = x2 - x1^2 + 1/3*x3^3\nf3 = x3 + 2*x1*x2*x3\n",
        [0.3, -0.2, 0.5],
    ),
    (
        "shifted3",
        "dim 3\nf1 = 1 + x1 + x2^2\nf2 = x2*x3 - 2\nf3 = x3 + 1/2*x1^2*x2\n",
        [1.0, -1.0, 0.5],
    ),
    (
        "cubic4",
        "dim 4\nf1 = x1^3 - x2*x3 + x4\nf2 = (x1 + x2)*(x3 - x4)\n"
        "f3 = 2*x3 + x1*x2*x4 - 0.25*x4^2\nf4 = x4^3 + x1 - 3*x2^2*x3\n",
        [0.1, 0.2, -0.3, 0.4],
    ),
    ("identity4", "dim 4\nf1 = x1\nf2 = x2\nf3 = x3\nf4 = x4\n", [1.0, 2.0, 3.0, 4.0]),
]


@pytest.fixture(scope="session")
def csq():
    return parse_map(CSQ_TEXT)


@pytest.fixture(scope="session")
def diag():
    return parse_map(DIAG_TEXT)


@pytest.fixture(scope="session")
def quad1d():
    return parse_map(QUAD1D_TEXT)


@pytest.fixture(scope="session")
def cubic1d():
    return parse_map(CUBIC1D_TEXT)


@pytest.fixture(scope="session")
def pert():
    return parse_map(PERT_TEXT)


@pytest.fixture(scope="session")
def identity2():
    return parse_map("dim 2\nf1 = x1\nf2 = x2\n")


@pytest.fixture(scope="session")
def suite():
    return [(name, parse_map(text), np.array(x)) for name, text, x in SUITE]


# -- acceptance summary ---------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
