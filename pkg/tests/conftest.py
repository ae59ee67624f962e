import pytest

from equiwarp.flow import FlowField, make_synthetic_flow

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def mixed_flows():
    """Shift, rotation, zoom-in and zoom-out on 64x64, twice over."""
    w = h = 64
    one = [make_synthetic_flow("translate", (1.3, -0.7), w, h),
           make_synthetic_flow("rotate", 0.05, w, h),
           make_synthetic_flow("zoom", 1.08, w, h),
           make_synthetic_flow("zoom", 0.93, w, h)]
    return one * 2


@pytest.fixture
def zero_flow():
    return FlowField.zeros(8, 8)
