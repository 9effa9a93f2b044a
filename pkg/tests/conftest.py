"""Shared fixtures. Everything here is sized for fast unit tests; the
acceptance suite builds its own desk-scale runs."""

import numpy as np
import pytest
import torch

from gandet.datasets import Corpus, CorpusConfig, build_corpus
from gandet.models import ModelConfig, init_bundle
from gandet.training import TrainConfig, train

torch.set_num_threads(1)

TINY_MODEL = ModelConfig(latent_dim=8, image_channels=1, base_channels=8, min_channels=4)

# one line per acceptance criterion, echoed after the run summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    def record(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_corpus() -> Corpus:
    return build_corpus(
        CorpusConfig(
            resolution=8,
            train_normal=48,
            train_anomaly_pool=24,
            test_normal=12,
            test_anomaly=12,
            noise_level=0.05,
            seed=422,
        )
    )


@pytest.fixture(scope="session")
def tiny_test_set(tiny_corpus):
    return tiny_corpus.test


@pytest.fixture(scope="session")
def tiny_bundle(tiny_corpus):
    """A briefly trained 8x8 bundle; frozen, with discriminator."""
    from gandet.datasets import ContaminationSpec, contaminate

    stream, _ = contaminate(
        tiny_corpus.train_normals, None, ContaminationSpec(gamma=0.0, seed=1)
    )
    bundle, _ = train(
        stream,
        TrainConfig(steps_per_phase=4, batch_size_start=8, batch_size_end=8, seed=9),
        8,
        TINY_MODEL,
    )
    return bundle


@pytest.fixture()
def fresh_tiny_bundle():
    """Unfrozen, untrained 8x8 bundle for step-level training tests."""
    return init_bundle(8, TINY_MODEL, seed=31)
