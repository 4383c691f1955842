import sys

import numpy as np
import pytest

from tcseq.markov import Dataset, MarkovChain


def random_chain(rng, M, K, density=0.5, absorb=0.05):
    """Random valid chain: every state gets some mass on class 1."""
    Q = rng.random((M, M)) * (rng.random((M, M)) < density)
    R = rng.random((M, K)) * (rng.random((M, K)) < 0.7)
    R[:, 0] += absorb
    U = np.hstack([Q, R])
    U /= U.sum(axis=1, keepdims=True)
    initial = rng.random(M)
    return MarkovChain(U[:, :M], U[:, M:], initial / initial.sum())


def random_chain_suite(n, seed=0, max_M=20, max_K=5):
    rng = np.random.default_rng(seed)
    chains = []
    for _ in range(n):
        M = int(rng.integers(1, max_M + 1))
        K = int(rng.integers(1, max_K + 1))
        chains.append(random_chain(rng, M, K, density=rng.uniform(0.1, 0.9)))
    return chains


@pytest.fixture
def two_state_chain():
    return MarkovChain([[0, 0.5], [0, 0]], [[0.5, 0], [0.3, 0.7]], [0.5, 0.5])


@pytest.fixture
def crossing_paths():
    return Dataset.from_trajectories([([1, 3], 1), ([2, 3], 2)], M=3, K=2)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
