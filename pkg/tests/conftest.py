import os

import pytest

from least_energy import experiments as ex

ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs the full claims matrix")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record():
    """Print and remember one pass/fail line per acceptance criterion."""
    def _record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _record


@pytest.fixture(scope="session")
def claims_run(tmp_path_factory):
    """One uncached run of the shipped claims matrix; tables are shared by the acceptance tests."""
    os.environ.pop(ex.CACHE_ENV, None)
    out = tmp_path_factory.mktemp("claims_a")
    cfg = ex.ExperimentConfig.load(ex.shipped_claims_path())
    status, summary = ex.run(cfg, out)
    return out, summary
