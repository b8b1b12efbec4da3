import numpy as np
import pytest

from koopman_moments import DataMatrices
from koopman_moments.harness import ExperimentConfig, prepare_data

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def lifted_linear_data(m=8, N=3, L=50, seed=0, with_constant=False):
    """Snapshots of an exactly linear lifted system ``G_{t+1} = A* G_t``.

    Returns ``(A_star, data)``.  ``A_star`` has spectral radius 0.9 so the
    snapshots stay well scaled.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, m))
    A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
    G0 = rng.standard_normal((m, L)) + 0.5
    if with_constant:
        A[0] = 0.0
        A[0, 0] = 1.0
        G0[0] = 1.0
    snaps = [G0]
    for _ in range(N):
        snaps.append(A @ snaps[-1])
    return A, DataMatrices.from_snapshots(snaps, constant_index=0 if with_constant else None)


@pytest.fixture
def linear_case():
    return lifted_linear_data()


@pytest.fixture(scope="session")
def duffing_data():
    return prepare_data(ExperimentConfig())


@pytest.fixture(scope="session")
def duffing_fits(duffing_data):
    from koopman_moments import fit_edmd, fit_edmd_aggregated, fit_unbiased
    G = duffing_data.snapshots
    return {
        "edmd": fit_edmd(G[0], G[1]),
        "aggregated": fit_edmd_aggregated(duffing_data),
        "unbiased": fit_unbiased(duffing_data),
    }
