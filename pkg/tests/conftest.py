import warnings

import numpy as np
import pytest

from stoprl.environments import load_preset


@pytest.fixture
def sa_medium():
    return load_preset("sa-medium")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_p1_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="linear Lyapunov shaping")
        yield


ACCEPTANCE = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
