import itertools
import math

import numpy as np
import pytest

from qdbell.qmath import validate_density


def random_density(rng, rank=4):
    a = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    m = a @ a.conj().T
    return validate_density(m / np.trace(m).real)


def random_product_density(rng):
    def one():
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        m = a @ a.conj().T
        return m / np.trace(m).real

    return validate_density(np.kron(one(), one()))


def permanent(m):
    n = m.shape[0]
    if n == 0:
        return 1.0
    return sum(
        math.prod(m[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n))
    )


def permanent_amplitude(u, inputs, outputs):
    """<outputs| U |inputs> for photons in linear-optical modes.

    ``inputs``/``outputs`` list one mode index per photon; ``u[out, in]`` is
    the single-photon transfer matrix.
    """
    sub = u[np.ix_(outputs, inputs)]
    norm = math.prod(math.factorial(inputs.count(k)) for k in set(inputs))
    norm *= math.prod(math.factorial(outputs.count(k)) for k in set(outputs))
    return permanent(sub) / math.sqrt(norm)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
