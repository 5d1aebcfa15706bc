import numpy as np
import pytest

from ringlab.models import MixtureModel


class ConstantField:
    """RF model stub with v(x, t) = a everywhere."""

    def __init__(self, a):
        self.a = np.asarray(a, dtype=np.float64)

    def guided_velocity(self, x, t, cond, scale=1.0):
        return np.broadcast_to(self.a, np.shape(x)).copy()


class ZeroEps:
    """DDIM model stub whose noise prediction is identically zero."""

    def __init__(self, schedule):
        self.schedule = schedule

    def guided_eps(self, x, alpha_bar, cond, scale=1.0):
        return np.zeros_like(x)


def scalar_mixture(mus=(-1.0, 1.5), sigmas=(0.3, 0.5), priors=(0.4, 0.6)):
    templates = np.asarray(mus, dtype=np.float64).reshape(-1, 1, 1, 1)
    return MixtureModel(templates, sigmas, priors)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    return MixtureModel.low_frequency(shape=(2, 16, 16), n_components=4, seed=5)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
