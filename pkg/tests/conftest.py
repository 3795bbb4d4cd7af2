import numpy as np
import pytest

from stagecut.dataset import Dataset, synth_clusters
from stagecut.schedule import VpSchedule


@pytest.fixture
def vp():
    return VpSchedule()


@pytest.fixture
def two_points():
    return Dataset(np.array([[-1.0], [1.0]]), range=(-1.0, 1.0))


@pytest.fixture
def separated_8():
    """Eight points in 16-D, pairwise distance at least 10."""
    centers = 10.0 * np.eye(16)[:8]
    return synth_clusters(centers, per_center=1, spread=0.0, seed=0)


# -- acceptance summary ------------------------------------------------------------

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    details = [v for k, v in item.user_properties if k == "detail"]
    if report.failed:
        crash = getattr(report.longrepr, "reprcrash", None)
        details.append(crash.message.splitlines()[0] if crash else str(report.longrepr)[:200])
    verdict = "PASS" if report.passed else "FAIL"
    config = item.config
    config.stash[_VERDICTS].append((number, f"criterion {number} {verdict}: {title}; " + "; ".join(details)))


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
