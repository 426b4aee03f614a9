import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wpbcfem.experiments import SlabProblem  # noqa: E402
from wpbcfem.mesh import SlabGeometry  # noqa: E402

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_geometry(**kw) -> SlabGeometry:
    base = dict(core_width=1.0, cladding_extent=1.0, pml_width_x=0.5, domain_length=1.0,
                element_size=0.25)
    base.update(kw)
    return SlabGeometry(**base)


@pytest.fixture
def small_problem() -> SlabProblem:
    """Coarse p=3 slab: fast 2D solves, full mode bases of ~50 modes."""
    return SlabProblem(geometry=small_geometry(), order=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
