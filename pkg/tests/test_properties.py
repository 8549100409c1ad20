"""Randomised properties over generated kernels and tables."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from permasoup.chain import ChainSpec, compute_u1
from permasoup.entropy import ProbabilityWeights, entropy_integral
from permasoup.kernel import IndexSet, Kernel, MetricTable, validate_kernel, verify_metric_relations
from permasoup.moments import alpha_permanent_moment, laplace_transform, partition_moment


@st.composite
def chains(draw, max_n=6):
    n = draw(st.integers(1, max_n))
    w = draw(arrays(float, (n, n), elements=st.floats(0, 5, allow_subnormal=False)))
    np.fill_diagonal(w, 0.0)
    return ChainSpec.from_rates(w)


@st.composite
def tables(draw, max_n=6):
    n = draw(st.integers(1, max_n))
    pts = draw(arrays(float, (n, 2), elements=st.floats(0, 3, allow_subnormal=False)))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    raw = draw(arrays(float, n, elements=st.floats(0.05, 1)))
    idx = IndexSet.range(n)
    return MetricTable(idx, "e", d), ProbabilityWeights.normalized(idx, raw)


@settings(max_examples=60, deadline=None)
@given(chains())
def test_chain_potentials_are_valid_kernels(c):
    u = compute_u1(c)
    assert validate_kernel(u).valid
    assert verify_metric_relations(u).passed


@settings(max_examples=40, deadline=None)
@given(chains(max_n=4), st.floats(0.1, 3.0), st.lists(st.integers(0, 3), min_size=1, max_size=4))
def test_partition_equals_permutation(c, beta, pts):
    u = compute_u1(c)
    pts = [p % c.n for p in pts]
    a = partition_moment(u, pts, beta, check=False).value
    b = alpha_permanent_moment(u, pts, beta).value
    assert math.isclose(a, b, rel_tol=1e-10, abs_tol=1e-14)


@settings(max_examples=40, deadline=None)
@given(chains(max_n=5), st.floats(0.1, 3.0))
def test_laplace_in_unit_interval_and_monotone(c, beta):
    u = compute_u1(c)
    w = np.linspace(0.1, 1.0, c.n)
    a = laplace_transform(u, w, beta)
    b = laplace_transform(u, 2 * w, beta)
    assert 0 < b <= a <= 1


@settings(max_examples=60, deadline=None)
@given(tables(), st.floats(0, 5), st.sampled_from([0.5, 2.0, 4 * math.sqrt(2 / 3)]))
def test_entropy_scaling(tm, a, c):
    m, mu = tm
    lhs = entropy_integral(m.scaled(c), mu, a)
    rhs = c * entropy_integral(m, mu, a / c)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


@settings(max_examples=60, deadline=None)
@given(tables(), st.floats(0, 3), st.floats(0, 3))
def test_entropy_nondecreasing(tm, a, b):
    m, mu = tm
    lo, hi = sorted((a, b))
    assert entropy_integral(m, mu, lo) <= entropy_integral(m, mu, hi) + 1e-15


@settings(max_examples=40, deadline=None)
@given(arrays(float, (3, 3), elements=st.floats(-2, 2)))
def test_symmetric_psd_relations(a):
    g = a @ a.T + 1e-6 * np.eye(3)
    assert verify_metric_relations(Kernel.from_matrix(g)).passed
