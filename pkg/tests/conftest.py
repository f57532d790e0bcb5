import numpy as np
import pytest
from scipy.linalg import expm

from simi.laws import Environment

# jump-time table of the non-monotone example: label -> [(wait, direction)]
TABLE = {
    (0, 1): [(1, 1), (1, 1)],
    (0, 2): [(11, 1)],
    (1, 1): [(4, 1), (1.5, 1), (4, 1)],
    (1, 2): [(5, 1), (1, 1), (4, 1)],
    (2, 1): [(3, 1), (1, 1)],
    (2, 2): [(9, 1)],
    (3, 1): [(6, 1)],
    (3, 2): [(6, 1)],
}


@pytest.fixture
def example_env():
    return Environment.from_values(A={2: 2, 3: 2, 4: 2}, I={2: 1, 3: 1, 4: 1, 5: 1})


def walk_hitting_cdf(k: int, times, width: int = 60) -> np.ndarray:
    """P(tau_k <= t) for the rate-2 simple walk, by matrix exponential on a truncated lattice.

    States -width..k-1 are transient, k is absorbing; leaving through the left
    edge is treated as never hitting (negligible for moderate t).
    """
    sites = np.arange(-width, k)
    n = len(sites)
    Q = np.zeros((n + 2, n + 2))  # last two: absorbed at k, lost at the left edge
    for j in range(n):
        Q[j, j] = -2.0
        Q[j, j + 1 if j + 1 < n else n] += 1.0
        Q[j, j - 1 if j > 0 else n + 1] += 1.0
    start = int(np.flatnonzero(sites == 0)[0])
    return np.array([expm(Q * t)[start, n] for t in times])
