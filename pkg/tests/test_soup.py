import math

import numpy as np
import pytest
from scipy import stats

from helpers import U1, chain2
from permasoup.chain import ChainError, ChainSpec
from permasoup.soup import (build_loop_kernel, loop_measure_first_moment, sample_loop_batch,
                            sample_nontrivial_loop, sample_soup, sample_soup_realizations,
                            sample_trivial_field, verify_soup)


def test_loop_kernel_two_state():
    lk = build_loop_kernel(chain2())
    assert np.allclose(lk.ptilde, [[0, 0.5], [2 / 3, 0]])
    assert lk.total_mass == pytest.approx(math.log(1.5), abs=1e-15)
    assert abs(lk.truncated_mass - lk.total_mass) < 1e-12
    assert lk.tail_bound < 1e-12
    assert np.allclose(lk.traces[1::2], 0)
    m = np.arange(1, lk.k_max // 2 + 1)
    assert np.allclose(lk.traces[2::2][: m.size], 2 * 3.0**-m)
    assert lk.k_probs[1] == pytest.approx((2 / 3) / (2 * math.log(1.5)))
    assert lk.k_probs[1] == pytest.approx(0.8221, abs=1e-4)


def test_loop_kernel_single_state():
    lk = build_loop_kernel(ChainSpec.from_rates([[0.0]]))
    assert lk.total_mass == 0.0


def test_loop_kernel_needs_unit_killing():
    with pytest.raises(ChainError):
        build_loop_kernel(chain2().without_killing())


def test_loop_lengths_even_and_skeletons_alternate():
    lk = build_loop_kernel(chain2())
    rng = np.random.default_rng(0)
    ks, sks, holds = sample_loop_batch(lk, rng, 20_000)
    assert np.all(ks % 2 == 0)
    for sk, h in zip(sks[:500], holds[:500]):
        assert np.all(sk != np.roll(sk, 1))
        assert np.all(h > 0)
    frac = np.mean(ks == 2)
    assert abs(frac - 0.822101) < 4 * math.sqrt(0.822101 * 0.177899 / ks.size)
    starts = np.array([sk[0] for sk, k in zip(sks, ks) if k == 2])
    assert abs(starts.mean() - 0.5) < 4 * 0.5 / math.sqrt(starts.size)


def test_single_loop_sample():
    loop = sample_nontrivial_loop(build_loop_kernel(chain2()), np.random.default_rng(1))
    assert len(loop.skeleton) >= 2 and len(loop.skeleton) == len(loop.holdings)


def test_trivial_field_moments():
    rng = np.random.default_rng(2)
    f = sample_trivial_field(chain2(), 2.0, rng, 200_000)
    assert np.allclose(f.mean(axis=0), [2.0 / 2, 2.0 / 3], rtol=0.01)


def test_zero_jump_soup_is_gamma():
    c = ChainSpec.from_rates(np.zeros((2, 2)))
    f = sample_soup(c, 1.5, 3, 50_000)
    for j in range(2):
        assert stats.kstest(f[:, j], stats.gamma(1.5).cdf).statistic < 0.01


def test_soup_first_and_second_moments():
    f = sample_soup(chain2(), 1.0, 4, 100_000)
    se = f.std(axis=0, ddof=1) / math.sqrt(f.shape[0])
    assert abs(f[:, 0].mean() - 0.75) < 4 * se[0]
    prod = f[:, 0] * f[:, 1]
    assert abs(prod.mean() - 0.5) < 4 * prod.std() / math.sqrt(prod.size)


def test_soup_realizations_decompose():
    reps = sample_soup_realizations(chain2(), 2.0, np.random.default_rng(5), 200)
    assert any(r.loops for r in reps)
    for r in reps:
        total = r.trivial_field + sum((lp.occupation(2) for lp in r.loops), np.zeros(2))
        assert np.allclose(r.field, total)
        assert np.all(r.field >= r.trivial_field)


def test_loop_measure_first_moment_matches_u1():
    est, se = loop_measure_first_moment(chain2(), 6, 200_000)
    assert np.all(np.abs(est - np.diag(U1)) < 4 * se)
    assert est[0] - 0.5 == pytest.approx(0.25, abs=4 * se[0])


def test_verify_soup_reports_meta():
    rep = verify_soup(chain2(), 0.5, 8, 20_000, max_order=2)
    assert rep.passed
    assert rep.meta["tail_bound"] < 1e-12
    assert len(rep.checks) == 5 + 3
    with pytest.raises(ValueError):
        verify_soup(chain2(), 0.5, 8, 100, max_order=5)
