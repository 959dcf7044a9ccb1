import numpy as np
import pytest

from dualmetric.synthgen import generate
from dualmetric.trainer import TrainConfig

# Filled by test_acceptance; printed once at the end of the session.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    """Fast configuration exercising every mechanism."""
    return TrainConfig(seed=3, d_in=8, d_hidden=6, d_out=4, n_labeled=40, n_unlabeled=40,
                       n_test=40, labeled_fraction=0.5, n_distractors=4, total_iters=60,
                       lr_decay_every=25, ramp_length=15, bank_capacity=32)


@pytest.fixture
def small_data(small_cfg):
    return generate(small_cfg.dataset_spec())
