import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_knn(points, query, k):
    """Reference kNN by full scan, ties broken by index."""
    diff = points - query
    d = np.sqrt((diff * diff).sum(axis=1))
    order = np.lexsort((np.arange(len(points)), d))[:k]
    return order, d[order]


_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or (rep.failed and rep.when == "setup")):
        return
    number, title = mark.args
    status = "PASS" if rep.passed else "FAIL"
    measured = "; ".join(v for k, v in item.user_properties if k == "measured")
    line = f"criterion {number} {title}: {status}"
    item.config.stash[_CRITERIA].append((number, line + (f" ({measured})" if measured else "")))


def pytest_terminal_summary(terminalreporter, config):
    rows = config.stash.get(_CRITERIA, [])
    if rows:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(rows):
            terminalreporter.write_line(line)
