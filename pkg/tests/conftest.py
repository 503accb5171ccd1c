import numpy as np
import pytest

from tuckercg import tensor_core


def _available_backends():
    names = ["python"]
    try:
        from tuckercg import _kernels  # noqa: F401
    except ImportError:
        pass
    else:
        names.append("cython")
    return names


BACKENDS = _available_backends()


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = tensor_core.backend_name()
    tensor_core.set_backend(request.param)
    yield request.param
    tensor_core.set_backend(prev)


@pytest.fixture
def threads():
    prev = tensor_core.get_threads()
    yield tensor_core.set_threads
    tensor_core.set_threads(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one verdict line per acceptance criterion, echoed after the test summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
