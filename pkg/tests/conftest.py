import numpy as np
import pytest

from ffomaml.relgraph import GcnConfig, embed_universe
from ffomaml.task_model import SynthConfig, generate_synthetic_universe


@pytest.fixture(scope="session")
def small_universe():
    return generate_synthetic_universe(SynthConfig(n_products=6, envs_per_product=3), seed=3)


@pytest.fixture(scope="session")
def small_embeddings(small_universe):
    return embed_universe(small_universe, GcnConfig(epochs=5), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def verdict():
    """Record one acceptance line, then fail the test if the criterion failed."""

    def record(name, ok, detail):
        line = f"{name} {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda l: int(l.split()[0][2:])):
            terminalreporter.write_line(line)
