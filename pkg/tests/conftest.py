import numpy as np
import pytest

from misscrit.model import MixtureParams, MixtureSpec, sample
from misscrit.simulate import SIM1_SPECS, SIM1_TRUTH, SIM2_SPECS, SIM2_TRUTH


@pytest.fixture
def sim1_truth():
    return SIM1_TRUTH


@pytest.fixture
def sim2_truth():
    return SIM2_TRUTH


@pytest.fixture
def model1():
    return SIM1_SPECS["sim1:model1"]


@pytest.fixture
def model2():
    return SIM1_SPECS["sim1:model2"]


@pytest.fixture(scope="session")
def all_specs():
    return list(SIM1_SPECS.values()) + list(SIM2_SPECS.values())


def random_params(spec: MixtureSpec, rng: np.random.Generator) -> MixtureParams:
    """A seeded valid point with weights away from the simplex edge.

    Adjacent means are at least one unit apart; coinciding components make
    the incomplete-data information singular.
    """
    w = 0.7 * rng.dirichlet(np.ones(spec.k)) + 0.3 / spec.k
    mu = np.cumsum(rng.uniform(1.0, 2.5, spec.k))
    mu = mu - mu.mean() + rng.uniform(-1, 1)
    var = rng.uniform(0.2, 2.0, spec.n_classes)
    return MixtureParams(spec, w, mu, var)


@pytest.fixture
def sim1_data(sim1_truth):
    return sample(sim1_truth, 1000, 12345)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
