import numpy as np
import pytest

from strain_sense.dataset import featurize_dataset, generate_synthetic, load_profiles
from strain_sense.optim import OptimizerSpec
from strain_sense.training import TrainConfig, fit_and_evaluate

ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail=""):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_state_specs():
    """Four-state synthetic spectrograms, 120 s per class (80 items)."""
    ds = generate_synthetic(load_profiles("default4"), 120, seed=3)
    return featurize_dataset(ds)


@pytest.fixture(scope="session")
def quick_model(small_state_specs):
    """A briefly trained state model, good enough for plumbing tests."""
    specs, stats = small_state_specs
    cfg = TrainConfig(OptimizerSpec("adam", 0.02), epochs=40, seed=3)
    net, report = fit_and_evaluate(specs, cfg, stats=stats)
    return net, report, specs, stats
