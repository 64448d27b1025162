import warnings

import numpy as np
import pytest

from nmcontrol.bath import BathSpec, LorentzianSet, expansion_with
from nmcontrol.model import SystemParams, default_params


@pytest.fixture(scope="session")
def bath_spec():
    return BathSpec(LorentzianSet.table_one(), 300.0, 4)


@pytest.fixture(scope="session")
def expansion14(bath_spec):
    return expansion_with(bath_spec, 4)


@pytest.fixture(scope="session")
def expansion10(bath_spec):
    # no Matsubara terms: K = 10, enough for structural checks
    return expansion_with(bath_spec, 0)


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def dephasing_params():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return SystemParams(default_params().delta, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
