import re

import numpy as np
import pytest

from rhb.systems import duffing_system

# (criterion, passed, detail) lines gathered by the acceptance tests
ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(criterion: str, passed: bool, detail: str) -> bool:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE.append((criterion, bool(passed), detail))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE, key=lambda r: (int(re.match(r"\d+", r[0]).group()), r[0])):
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def duffing():
    return duffing_system()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
