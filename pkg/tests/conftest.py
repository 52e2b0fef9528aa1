from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from modal_transfer.population import PopulationConfig, build_tasks, generate_population
from modal_transfer.study import StudyConfig

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_config():
    """Five structures with ten samples per class: runs end-to-end in seconds."""
    return StudyConfig(population=replace(PopulationConfig(), n_structures=5, samples_per_class=10),
                       grid_D=(2, 3, 4), sweep_D=(1, 2, 3))


@pytest.fixture(scope="session")
def small_population(small_config):
    return generate_population(small_config.population)


@pytest.fixture(scope="session")
def small_tasks(small_population):
    return build_tasks(small_population)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def criterion(request):
    """Record one ``criterion N: PASS/FAIL`` line, shown again in the terminal summary."""
    lines = request.config.stash[_CRITERIA]

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)
