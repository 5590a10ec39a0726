import time
from dataclasses import dataclass

import numpy as np
import pytest

from cglo.fixture import make_patches
from cglo.generator import GeneratorConfig, GeneratorParams
from cglo.trainer import LatentTable, LossHistory, TrainConfig, train

# Desk-scale setting shared by the slow tests and the acceptance suite.
FIXTURE_N, FIXTURE_SIZE, FIXTURE_D, FIXTURE_EPOCHS = 64, 16, 8, 200

ACCEPTANCE_LINES: list[str] = []


@dataclass
class FixtureRun:
    patches: np.ndarray
    labels: np.ndarray
    gen_config: GeneratorConfig
    train_config: TrainConfig
    params: GeneratorParams
    table: LatentTable
    history: LossHistory
    seconds: float


def fixture_configs(seed=0):
    gen = GeneratorConfig(d=FIXTURE_D, output_size=FIXTURE_SIZE, channels=1, base_feat=64, seed=seed)
    return gen, TrainConfig(epochs=FIXTURE_EPOCHS, seed=seed)


@pytest.fixture(scope="session")
def fixture_run() -> FixtureRun:
    patches, labels = make_patches(FIXTURE_N, FIXTURE_SIZE, seed=0)
    gen, tc = fixture_configs()
    start = time.process_time()
    params, table, history = train(patches, labels, gen, tc)
    return FixtureRun(patches, labels, gen, tc, params, table, history, time.process_time() - start)


@pytest.fixture
def small_config():
    return GeneratorConfig(d=4, output_size=8, channels=1, base_feat=8, seed=0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
