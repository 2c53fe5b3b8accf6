import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_problem(rng, n=60, p=40, s=5, noise="cauchy", scale=1.0):
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[:s] = 1.0
    eps = rng.standard_cauchy(n) if noise == "cauchy" else rng.standard_normal(n)
    return X, X @ beta + scale * eps, beta


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
