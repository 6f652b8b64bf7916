import numpy as np
import pytest

from asynciqc.lti import StateSpace


@pytest.fixture
def random_stable():
    """Factory for random stable SISO realizations with a decay margin of at least 0.2."""

    def make(rng, order, feedthrough=True):
        A = rng.normal(size=(order, order))
        A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.2, 1.0)) * np.eye(order)
        D = rng.normal() if feedthrough else 0.0
        return StateSpace(A, rng.normal(size=(order, 1)), rng.normal(size=(1, order)), D)

    return make
