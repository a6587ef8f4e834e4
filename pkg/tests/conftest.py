import os

# must happen before numba is first imported so worker-count tests can
# request up to 16 threads regardless of the core count
os.environ.setdefault("NUMBA_NUM_THREADS", "16")
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np
import pytest

import sdemor


def random_stable_system(n, q, seed, T=1.0, m=2, p=2, noise_scale=0.3):
    """Random mean-square stable dense instance with a correlation-shaped
    noise covariance."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) / np.sqrt(n)
    A = A - (np.abs(np.linalg.eigvals(A).real).max() + 0.5) * np.eye(n)
    N = tuple(rng.standard_normal((n, n)) * noise_scale / np.sqrt(n)
              for _ in range(q))
    X0 = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    G = rng.standard_normal((q, q))
    K = G @ G.T / q
    d = np.sqrt(np.diag(K))
    K = K / np.outer(d, d)
    return sdemor.SystemCoefficients(A=A, N=N, X0=X0, C=C, K_M=K, T=T)


@pytest.fixture(scope="session")
def stable10():
    return random_stable_system(10, 3, seed=1)


@pytest.fixture(scope="session")
def scalar_bs():
    sys, z0 = sdemor.build_bs_model(0.02, 0.07, [0.2], [1.0],
                                    np.eye(1), 1.0)
    return sys, z0
