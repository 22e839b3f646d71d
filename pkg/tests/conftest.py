import numpy as np
import pytest

from thermogate.models import build_qubit_ancilla_model, build_two_qubit_model, guess_field, target_superoperator


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def qutrit():
    return build_qubit_ancilla_model(1, eps_uc_scale=2e-5)


@pytest.fixture(scope="session")
def hadamard():
    return target_superoperator("hadamard", 3)


@pytest.fixture(scope="session")
def short_qutrit_field(qutrit):
    # a short, strongly driven pulse keeps unit tests quick
    return guess_field(qutrit, tau=20.0, dt=0.1, amplitudes=0.3)


@pytest.fixture(scope="session")
def cix_model():
    return build_two_qubit_model(a_y=0.0)


@pytest.fixture(scope="session")
def cix():
    return target_superoperator("cix", 4)


ACCEPTANCE_LINES = []


def record_criterion(name: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
