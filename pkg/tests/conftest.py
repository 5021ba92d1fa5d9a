import numpy as np
import pytest

ACCEPTANCE = {}


@pytest.fixture
def report():
    """Record one acceptance line: report("AC1", ok, "detail")."""
    def _report(key, ok, detail=""):
        line = f"{key}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        ACCEPTANCE[key] = line
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:].split(".")[0].split("_")[0])):
            terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
