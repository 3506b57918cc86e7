import numpy as np
import pytest

from retparity.mdp import GroupPair, Mdp, random_mdp


def random_pair(rng, m, n, gamma, lam=0.5, **kw) -> GroupPair:
    return GroupPair(random_mdp(m, n, gamma, rng, **kw), random_mdp(m, n, gamma, rng, **kw), lam)


def golden_pairs(count=60, seed=2024):
    """Fixed suite of small pairs (m, n <= 3) used by the fair-LP checks."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        m = int(rng.integers(1, 4))
        n = int(rng.integers(1, 4))
        gamma = (0.5, 0.9)[i % 2]
        sparsity = 0.5 if i % 3 == 0 else 0.0
        out.append(random_pair(rng, m, n, gamma, lam=float(rng.uniform(0.2, 0.8)), sparsity=sparsity))
    return out


def shared_pair(rng, m, n, gamma):
    """Pair meeting the shared-reward / shared-start / state-only-reward assumptions."""
    mu = rng.dirichlet(np.ones(m))
    r = np.repeat(rng.uniform(-1, 1, size=(m, 1)), n, axis=1)
    T0 = rng.dirichlet(np.ones(m), size=(m, n))
    T1 = rng.dirichlet(np.ones(m), size=(m, n))
    return GroupPair(Mdp(mu, T0, r, gamma), Mdp(mu, T1, r, gamma))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    for mod in list(sys.modules.values()):
        results = getattr(mod, "ACCEPTANCE_RESULTS", None)
        if results:
            terminalreporter.section("acceptance criteria")
            for number in sorted(results):
                terminalreporter.write_line(results[number])
            break
