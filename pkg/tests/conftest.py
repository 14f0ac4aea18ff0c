import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_hermitian(rng, n):
    a = rng.uniform(-1, 1, (n, n)) + 1j * rng.uniform(-1, 1, (n, n))
    return (a + a.conj().T) / 2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_hk(rng, n, k, hermitian=True):
    """Random matrix in H_n^k built directly from the zero pattern."""
    if hermitian:
        x = random_hermitian(rng, n)
    else:
        x = rng.uniform(-1, 1, (n, n)) + 1j * rng.uniform(-1, 1, (n, n))
    for j in range(min(k, n)):
        x[j + 2:, j] = 0
        if hermitian:
            x[j, j + 2:] = 0
        if j + 1 < n:
            s = rng.uniform(0.1, 1.0)
            x[j + 1, j] = s
            if hermitian:
                x[j, j + 1] = s
    return x


def structured_hk(rng, n, k, hermitian=True):
    """A matrix in H_n^k with an eigenvalue of multiplicity about n - k.

    A Jacobi block on the first ``k`` coordinates is coupled by one positive
    entry to ``mu * I``; every vector of the scalar block orthogonal to the
    coupling direction is an eigenvector for ``mu``.
    """
    x = np.zeros((n, n), dtype=complex)
    mu = rng.uniform(-1, 1)
    x[k:, k:] = mu * np.eye(n - k)
    if k > 0:
        x[:k, :k] = np.diag(rng.uniform(-1, 1, k))
        for j in range(k):
            if j + 1 < n:
                s = rng.uniform(0.1, 1.0)
                x[j + 1, j] = s
                if hermitian or j + 1 < k:
                    x[j, j + 1] = s
    if not hermitian:
        x[:k, k:] += np.triu(rng.uniform(-1, 1, (k, n - k)))
    return x


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
