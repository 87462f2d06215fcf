import numpy as np
import pytest

from ecs_engine.datasets import generate_synthetic
from ecs_engine.model import ModelConfig, init_weights
from ecs_engine.pipeline import Engine
from ecs_engine.tokenizer import build_default_vocabulary


@pytest.fixture(scope="session")
def default_config():
    return ModelConfig()


@pytest.fixture(scope="session")
def default_weights(default_config):
    return init_weights(default_config, seed=1234)


@pytest.fixture(scope="session")
def vocab(default_config):
    return build_default_vocabulary(default_config.vocab_size)


@pytest.fixture(scope="session")
def engine(default_config, default_weights, vocab):
    return Engine(default_config, default_weights, vocab)


@pytest.fixture(scope="session")
def mc_samples():
    return generate_synthetic(3, 12, "multiple_choice")


@pytest.fixture(scope="session")
def math_samples():
    return generate_synthetic(3, 4, "free_form_math")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# --- acceptance report ------------------------------------------------------

_CRITERIA: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.failed:
        _CRITERIA[name] = "FAIL"
    elif report.when == "call" and name not in _CRITERIA:
        _CRITERIA[name] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _CRITERIA.items():
        terminalreporter.write_line(f"{status}  {name}")
