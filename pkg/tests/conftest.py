import pytest

from helpers import grid_map


@pytest.fixture
def half_split():
    """4x4, class 0 on the left two columns, class 1 on the right two."""
    return grid_map([[0, 0, 1, 1]] * 4, 3)


@pytest.fixture
def corner_map():
    """4x4, class 0 only at pixel (0, 0), class 1 everywhere else."""
    rows = [[1] * 4 for _ in range(4)]
    rows[0][0] = 0
    return grid_map(rows, 2)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
