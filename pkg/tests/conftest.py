import numpy as np
import pytest

from isingcap.channel import UnifilarChannel


def random_channel(n: int, rng: np.random.Generator, sparsity: float = 0.3) -> UnifilarChannel:
    """Arbitrary unifilar channel: random kernel rows with some zeros, random state map."""
    kernel = rng.random((n, n, n)) * (rng.random((n, n, n)) > sparsity)
    # keep at least one positive entry per row
    kernel[np.arange(n)[:, None], np.arange(n)[None, :], rng.integers(0, n, size=(n, n))] += 0.5
    kernel /= kernel.sum(axis=2, keepdims=True)
    state_fn = rng.integers(0, n, size=(n, n, n))
    return UnifilarChannel(n, kernel, state_fn, name="random")


def random_action(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(np.ones(n) * 0.7, size=n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
