import dataclasses

import numpy as np
import pytest

from chaostemp.gibbs import DisorderRealization
from chaostemp.mixture import MixtureSpec

SK = MixtureSpec({2: 1.0})


def zero_disorder(n, h=None, spec=SK):
    """Realization with all couplings set to zero and the given (N, 2) fields."""
    real = DisorderRealization.sample(spec, n, seed=0)
    real = dataclasses.replace(real, couplings={p: np.zeros_like(g) for p, g in real.couplings.items()})
    if h is not None:
        real = real.with_fields(h)
    return real


@pytest.fixture
def sk():
    return SK
