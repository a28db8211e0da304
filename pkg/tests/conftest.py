import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from onlineph import DataBlock
from onlineph.sim import SimConfig, generate_block

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("stress", deadline=None, max_examples=1500)
settings.load_profile(__import__("os").environ.get("HYPOTHESIS_PROFILE", "default"))

# all four subjects fail; x alternates 0,1
D4_TIMES = [1.0, 2.0, 3.0, 4.0]
D4_STATUS = [1, 1, 1, 1]
D4_X = [0.0, 1.0, 0.0, 1.0]
D4_BETA_HAT = float(np.log((np.sqrt(17.0) - 1.0) / 8.0))


def make_d4() -> DataBlock:
    return DataBlock(np.array(D4_TIMES), np.array(D4_STATUS), np.array(D4_X)[:, None])


@pytest.fixture
def d4():
    return make_d4()


@pytest.fixture(scope="session")
def null_blocks():
    """Ten simulated null blocks of 400 subjects."""
    cfg = SimConfig(K=10, n_k=400, seed=7)
    return [generate_block(cfg, k) for k in range(1, 11)]


@st.composite
def small_blocks(draw, max_n=30, max_p=3, ties=False):
    """Random small blocks with at least one event and a non-degenerate design."""
    n = draw(st.integers(min_value=4, max_value=max_n))
    p = draw(st.integers(min_value=1, max_value=max_p))
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    rng = np.random.default_rng(seed)
    if ties:
        time = rng.integers(1, max(2, n // 3), size=n).astype(float)
    else:
        time = rng.exponential(size=n) + 1e-3
    status = (rng.random(n) < 0.7).astype(int)
    status[rng.integers(n)] = 1
    x = rng.normal(size=(n, p))
    return DataBlock(time, status, x)


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
