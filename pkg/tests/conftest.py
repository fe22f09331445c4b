import numpy as np
import pytest

from fbenv.fbe import CompositeProblem
from fbenv.linops import DenseOperator
from fbenv.prox import l1_norm
from fbenv.smooth import quadratic_loss

_ACCEPTANCE = {}


def record_acceptance(cid, ok, detail=""):
    """Store and print one acceptance line."""
    line = f"{cid:<4} {'PASS' if ok else 'FAIL'}  {detail}"
    _ACCEPTANCE[cid] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
        terminalreporter.write_line(_ACCEPTANCE[cid])


@pytest.fixture
def acceptance():
    return record_acceptance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_lasso():
    r = np.random.default_rng(7)
    A = r.standard_normal((10, 20))
    b = r.standard_normal(10)
    lam = 0.1 * np.abs(A.T @ b).max()
    return CompositeProblem(quadratic_loss(DenseOperator(A), b), l1_norm(lam, 20), name="lasso")
