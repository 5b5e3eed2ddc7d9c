import sys
from dataclasses import replace
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from offload.model import Mode, default_params, generate_instance  # noqa: E402


@pytest.fixture
def defaults():
    return default_params()


@pytest.fixture
def friendly():
    """Parameters under which offloading pays off, so every code path is exercised."""
    params, device = default_params()
    params = replace(params, alpha=2e-8, beta=4e-8, lambda1=1e16, lambda2=1e14, lambda3=1e14)
    return params, device


def make(pd, n=2, m=2, seed=0, mode=Mode.NO_CAP):
    params, device = pd
    return generate_instance(params, device, n, m, seed=seed, mode=mode)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
