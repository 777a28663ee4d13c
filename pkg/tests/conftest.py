import numpy as np
import pytest

from ctxlab.model import ModelConfig, init_random

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = report.user_properties and dict(report.user_properties).get("criterion")
    if marker:
        number, title = marker
        previous = _criteria.get(number, (title, "passed"))[1]
        outcome = "failed" if "failed" in (previous, report.outcome) else report.outcome
        _criteria[number] = (title, outcome)


@pytest.fixture(autouse=True)
def _record_criterion(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker:
        record_property("criterion", tuple(marker.args))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcome = _criteria[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_config():
    return ModelConfig(vocab_size=256, d_model=64, n_layers=2, n_heads=4, max_pretrain_len=64, mlp_hidden=128)


@pytest.fixture(scope="session")
def toy_weights(toy_config):
    return init_random(toy_config, seed=7)


@pytest.fixture(scope="session")
def small_config():
    return ModelConfig(vocab_size=256, d_model=32, n_layers=2, n_heads=2, max_pretrain_len=64, mlp_hidden=64)
