"""Random instances shared by the test modules."""

import numpy as np

from permasoup.chain import ChainSpec
from permasoup.kernel import Kernel


def random_chain(rng, n, density=0.6, scale=2.0):
    w = rng.exponential(scale, (n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(w, 0.0)
    return ChainSpec.from_rates(w)


def random_chain_kernel(rng, max_n=8):
    from permasoup.chain import compute_u1
    return compute_u1(random_chain(rng, int(rng.integers(2, max_n + 1))))


def random_psd_kernel(rng, max_n=8, rank=None):
    n = int(rng.integers(2, max_n + 1))
    r = n if rank is None else rank
    a = rng.standard_normal((n, r))
    return Kernel.from_matrix(a @ a.T)


def chain2():
    return ChainSpec.from_rates([[0.0, 1.0], [2.0, 0.0]])


def ring3():
    return ChainSpec.from_rates([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])


U1 = np.array([[0.75, 0.25], [0.5, 0.5]])
