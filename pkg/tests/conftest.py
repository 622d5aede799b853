import time

import pytest

from rasor import synthetic, trainer
from rasor.config import TrainConfig
from rasor.data import load_examples
from rasor.embeddings import load_pretrained

FIXTURE_DIM = 32

# Overfitting setup for the synthetic fixture: d = 20, lr 0.001, seeded,
# deterministic, stopping once training EM reaches 100.
OVERFIT = dict(hidden_dim=20, learning_rate=0.001, embedding_dim=FIXTURE_DIM, oov_buckets=10,
               max_steps=2000, eval_interval=50, early_stop_em=100.0, seed=0)

ACCEPTANCE_RESULTS = []


def overfit_config(**changes):
    return TrainConfig(**{**OVERFIT, **changes})


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic")
    synthetic.write_fixture(str(out), dim=FIXTURE_DIM)
    return out


@pytest.fixture(scope="session")
def fixture_paths(fixture_dir):
    return str(fixture_dir / "synthetic.json"), str(fixture_dir / "synthetic.vec")


@pytest.fixture(scope="session")
def fixture_examples(fixture_paths):
    return load_examples(fixture_paths[0])


@pytest.fixture(scope="session")
def fixture_store(fixture_paths):
    return load_pretrained(fixture_paths[1], dim=FIXTURE_DIM, oov_buckets=OVERFIT["oov_buckets"])


class TrainedRun:
    def __init__(self, checkpoints, state, seconds):
        self.checkpoints = checkpoints
        self.state = state
        self.seconds = seconds

    @property
    def final(self):
        return self.checkpoints[-1]

    @property
    def model(self):
        return self.state.model


@pytest.fixture(scope="session")
def overfit_runs(fixture_examples, fixture_store):
    """Train each objective once per session and share the result."""
    cache = {}

    def get(objective, **changes):
        key = (objective, tuple(sorted(changes.items())))
        if key not in cache:
            run = []
            start = time.perf_counter()
            ckpts = list(trainer.train_loop(overfit_config(objective=objective, **changes),
                                            fixture_examples, fixture_store, run=run))
            cache[key] = TrainedRun(ckpts, run[0], time.perf_counter() - start)
        return cache[key]

    return get


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
