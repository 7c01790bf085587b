from __future__ import annotations

import numpy as np
import pytest

from trajpace import build_tree, lattice_tree


@pytest.fixture
def one_step():
    """s0 = 1 with children 0.9, 1.0, 1.1."""
    return build_tree([[1.0, 0.9], [1.0, 1.0], [1.0, 1.1]])


@pytest.fixture
def binomial2():
    """Multiplicative binomial, s0 = 100, u = 1.2, d = 0.8, two steps."""
    return lattice_tree(100.0, [1.2, 0.8], 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_c" in report.nodeid and report.when == "call":
        n = int(report.nodeid.split("::test_c")[1][:2])
        _ACCEPTANCE[n] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    import sys

    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    verdicts = getattr(mod, "VERDICTS", {})
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        line = verdicts.get(n)
        if line is None or (_ACCEPTANCE[n] != "passed" and line.startswith("[PASS]")):
            line = f"[FAIL] {n:2d} raised before reaching its verdict"
        terminalreporter.write_line(line)
