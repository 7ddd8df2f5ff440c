"""Session-wide sample batches of the lognormal laws (10**6 draws each)."""

from dataclasses import dataclass

import numpy as np
import pytest

from branchtail.law import closed_mu
from branchtail.moments import solve_alpha
from branchtail.treesim import batch_R, pick_depth

import laws

COUNT = 10**6


@dataclass
class Batch:
    law: object
    depth: int
    alpha: float
    mu: float
    values: np.ndarray
    seconds: float


def _batch(law, seed):
    import time
    t = time.perf_counter()
    alpha = solve_alpha(law).alpha
    depth = pick_depth(law)
    values = batch_R(law, depth, COUNT, seed=seed, stream_count=4).values
    return Batch(law, depth, alpha, closed_mu(law, alpha), values, time.perf_counter() - t)


@pytest.fixture(scope="session")
def positive_lognormal():
    """N = 2, lognormal |C|, no negative weights, Q = 1."""
    return _batch(laws.lognormal(), 2024)


@pytest.fixture(scope="session")
def signed_lognormal():
    """The same law with each weight negative with probability 1/2."""
    return _batch(laws.lognormal(0.5), 2025)


@pytest.fixture(scope="session")
def symmetric_lognormal():
    """Signed weights and Q = +-1: R is symmetric in law."""
    return _batch(laws.symmetric_lognormal(), 2026)
