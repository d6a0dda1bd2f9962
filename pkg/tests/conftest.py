import numpy as np
import pytest
from hypothesis import settings

from hpinf.estimators import GradientDump

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def random_spd(rng, d, n=None, lam=0.01, std=1.0):
    n = 2 * d if n is None else n
    s = std * rng.standard_normal((n, d))
    m = s.T @ s
    m = 0.5 * (m + m.T)
    m.flat[:: d + 1] += lam
    return m


def random_dump(rng, n=20, blocks=(("a", 16, 2), ("b", 16, 2), ("c", 16, 2)), val_scale=1.0):
    names = [b[0] for b in blocks]
    train = {name: rng.standard_normal((n, d, r)) for name, d, r in blocks}
    val = {name: val_scale * rng.standard_normal((d, r)) for name, d, r in blocks}
    return GradientDump(names, train, val)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
