import sys

import numpy as np
import pytest

from hopformer.graph import CsrGraph


@pytest.fixture
def two_node():
    return CsrGraph.from_edges(2, [(0, 1)], features=[[1.0], [3.0]])


@pytest.fixture
def path3():
    return CsrGraph.from_edges(3, [(0, 1), (1, 2)], features=np.eye(3))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(results, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {crit}: {detail}")
