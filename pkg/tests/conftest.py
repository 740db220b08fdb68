import numpy as np
import pytest

from nird.mesh import MeshForest, unit_square_macro


@pytest.fixture
def macro():
    return unit_square_macro(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mesh(seed: int, steps: int = 6, frac: float = 0.3, macro=None) -> MeshForest:
    """Adaptively refined mesh from random marking."""
    r = np.random.default_rng(seed)
    mesh = MeshForest.from_macro(macro or unit_square_macro(2))
    for _ in range(steps):
        k = max(1, int(frac * mesh.nleaves))
        mesh = mesh.refine(r.choice(mesh.nleaves, size=k, replace=False))
    return mesh


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_criterion(number: int, ok: bool, detail: str):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
