import numpy as np
import pytest
from hypothesis import settings

from spanqa.dataset import build_dataset
from spanqa.synth import synthetic_corpus

settings.register_profile("repo", deadline=None)
settings.load_profile("repo")


def grid_tiou(pred, gold, step=1e-3):
    """Brute-force tIoU on a uniform grid of cell midpoints."""
    pairs = list(pred) + list(gold)
    hi = max(e for _, e in pairs)
    t = (np.arange(int(np.ceil(hi / step)) + 1) + 0.5) * step

    def mask(spans):
        m = np.zeros_like(t, dtype=bool)
        for s, e in spans:
            m |= (t >= s) & (t <= e)
        return m

    a, b = mask(pred), mask(gold)
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    mdir = tmp_path_factory.mktemp("manifests")
    videos, graphs = synthetic_corpus(50, seed=11, manifest_dir=mdir)
    result = build_dataset(graphs, seed=11)
    return {"videos": videos, "graphs": graphs, "records": result.records, "result": result, "manifest_dir": mdir}


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    mdir = tmp_path_factory.mktemp("small_manifests")
    videos, graphs = synthetic_corpus(6, seed=3, manifest_dir=mdir)
    result = build_dataset(graphs, seed=3)
    return {"videos": videos, "graphs": graphs, "records": result.records, "manifest_dir": mdir}


_ACCEPTANCE: dict[int, tuple[str, str]] = {}
ACCEPTANCE_DETAIL: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    failed = report.failed
    if report.when == "call" or failed:
        prev = _ACCEPTANCE.get(number)
        if prev is None or prev[0] == "PASS":
            _ACCEPTANCE[number] = ("FAIL" if failed else "PASS", title)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title = _ACCEPTANCE[number]
        detail = ACCEPTANCE_DETAIL.get(number, "no measurement recorded")
        terminalreporter.write_line(f"[{status}] criterion {number}: {title} -- {detail}")
