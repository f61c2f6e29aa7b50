import pytest

from corrmeta.config import RunConfig
from corrmeta.dataset import apply_mapping, group_by_factor, load_bundled
from corrmeta.report import run_pipeline
from corrmeta.transforms import NormalizedEffect, normalize_all

# acceptance criterion number -> (description, list of outcomes)
ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, text): test implements an acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            ACCEPTANCE.setdefault(m.args[0], (m.args[1], []))


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for n, (text, outcomes) in ACCEPTANCE.items():
        if f"criterion_{n}_" in report.nodeid:
            outcomes.append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        text, outcomes = ACCEPTANCE[n]
        if not outcomes:
            status = "NOT RUN"
        else:
            status = "PASS" if all(outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {text}")


@pytest.fixture(scope="session")
def dataset():
    return apply_mapping(load_bundled())


@pytest.fixture(scope="session")
def dataset_table2():
    return apply_mapping(load_bundled("table2"))


@pytest.fixture(scope="session")
def groups(dataset):
    return {f: normalize_all(g) for f, g in group_by_factor(dataset).items()}


@pytest.fixture(scope="session")
def report(dataset):
    return run_pipeline(dataset, RunConfig())


