import numpy as np
import pytest

from barnetkit.tensor import Tensor, mul, sum_all

# filled in by the acceptance tests; printed after the run so every
# release criterion gets one visible PASS/FAIL line
_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for index in sorted(_ACCEPTANCE):
        label, ok, detail = _ACCEPTANCE[index]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(
            f"criterion {index} {status} [{label}] {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def randt(rng, shape, lo=-1.0, hi=1.0, requires_grad=True):
    """Uniform random float64 tensor for gradient checks."""
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=requires_grad)


class Scalarizer:
    """Projects tensors to scalars via random weights that are frozen on
    first use per shape, so repeated evaluations (finite differences)
    see the same objective."""

    def __init__(self, seed):
        self._rng = np.random.default_rng(seed)
        self._weights = {}

    def __call__(self, t):
        w = self._weights.get(t.shape)
        if w is None:
            w = self._weights[t.shape] = Tensor(self._rng.uniform(-1.0, 1.0, size=t.shape))
        return sum_all(mul(t, w))
