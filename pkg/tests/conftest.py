import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from polywalk.polytope import new_polytope

settings.register_profile(
    "polywalk",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("polywalk")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def square():
    A = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]
    return new_polytope(A, np.ones(4))


@pytest.fixture
def interval():
    return new_polytope([[1.0], [-1.0]], [1.0, 1.0])


@pytest.fixture
def report():
    """Record a one-line acceptance verdict, echoed in the terminal summary."""

    def _report(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{name}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
