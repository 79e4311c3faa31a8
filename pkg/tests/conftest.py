import numpy as np
import pytest

from hawkes_ccrm.data import InteractionDataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def three_pair_history():
    """Twelve interactions on three pairs over [0, 4], with replies in each pair."""
    t = [0.5, 0.8, 1.0, 1.2, 2.0, 2.1, 2.15, 2.5, 2.6, 3.0, 3.5, 3.9]
    s = [0, 1, 1, 0, 2, 3, 2, 4, 1, 0, 1, 3]
    d = [1, 4, 0, 1, 3, 2, 3, 1, 4, 1, 0, 2]
    return InteractionDataset(t, s, d, T=4.0, n_nodes=5)


def random_history(rng, n, T=10.0, ties=False):
    """Forward and backward event times; with ``ties`` some times coincide across directions."""
    t = np.sort(rng.uniform(0, T, n))
    if ties and n > 3:
        t[1::3] = t[0:-1:3][: t[1::3].size]
        t = np.sort(t)
    fwd = rng.random(n) < 0.5
    return t[fwd], t[~fwd]


ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, print it, then assert."""

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
