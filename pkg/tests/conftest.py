import numpy as np
import pytest

import moelab as ml


@pytest.fixture
def bench_truth():
    """The two-component benchmark truth used by the rate experiments."""
    return ml.true_measure(
        beta0=[-8.0, 0.0],
        beta1=[[25.0], [0.0]],
        a=[[-20.0], [20.0]],
        b=[15.0, -5.0],
        sigma=[0.3, 0.4],
    )


def random_measure(rng, k, d=1, family=ml.GAUSSIAN, pinned=False):
    """A random fitted-style measure; pin the last component on request."""
    beta0 = rng.normal(0.0, 1.0, size=k)
    beta1 = rng.normal(0.0, 2.0, size=(k, d))
    a = rng.normal(0.0, 2.0, size=(k, d))
    b = rng.normal(0.0, 2.0, size=k)
    sigma = np.exp(rng.normal(-0.5, 0.4, size=k))
    if pinned:
        beta0[-1] = 0.0
        beta1[-1] = 0.0
    return ml.MixingMeasure.from_arrays(beta0, beta1, a, b, sigma, family=family)
