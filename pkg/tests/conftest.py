import numpy as np
import pytest

from casi.bench import BlobSpec, generate_blobs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs3():
    X, y = generate_blobs(BlobSpec(n_per_cluster=100, d=2, k_true=3, seed=7))
    return X, y


@pytest.fixture(scope="session")
def blobs3_csv(tmp_path_factory, blobs3):
    from casi.dataset import save_csv

    path = tmp_path_factory.mktemp("data") / "blobs3.csv"
    save_csv(path, blobs3[0])
    return path


# Acceptance bookkeeping: one summary line per criterion, PASS or FAIL taken
# from the test outcome and the detail from whatever the test recorded.
_DETAILS: dict = {}
_OUTCOMES: dict = {}


@pytest.fixture
def record(request):
    marker = request.node.get_closest_marker("criterion")
    n = marker.args[0]

    def write(text):
        _DETAILS[n] = text

    return write


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    n = marker.args[0]
    _OUTCOMES[n] = _OUTCOMES.get(n, True) and rep.passed
    if rep.failed and n not in _DETAILS:
        _DETAILS[n] = str(call.excinfo.value).splitlines()[0] if call.excinfo else "failed"


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        verdict = "PASS" if _OUTCOMES[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {_DETAILS.get(n, '')}".rstrip())
