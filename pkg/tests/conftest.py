import os
import re
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def example_pixels():
    # network order [0.4, 0.6, 0.55, 0.72] lists column 1 then column 2
    return np.array([[0.4, 0.55], [0.6, 0.72]])


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, with the measured numbers."""
    labels = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    found = {}
    for outcome, label in labels.items():
        for rep in terminalreporter.stats.get(outcome, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", getattr(rep, "nodeid", ""))
            if m and (rep.when == "call" or outcome != "passed"):
                detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
                found[int(m.group(1))] = (label, detail)
    if not found:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(found):
        label, detail = found[k]
        terminalreporter.write_line(f"criterion {k}: {label}  {detail}".rstrip())
