import pytest

from fwmlab.config import paper_replay_config
from fwmlab.pipeline import compute_jsa, source_model


@pytest.fixture(scope="session")
def cfg():
    return paper_replay_config()


@pytest.fixture(scope="session")
def jsa_result(cfg):
    return compute_jsa(cfg)


@pytest.fixture(scope="session")
def model(cfg):
    return source_model(cfg)


@pytest.fixture(scope="session")
def reference_sweep(cfg, model):
    """The reference power sweep (5 points, 2e8 pulses each) with its fits."""
    from fwmlab.pipeline import fit_sweep, run_sweep
    rows = [r.metrics for r in run_sweep(cfg, model)]
    return rows, fit_sweep(rows)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)
