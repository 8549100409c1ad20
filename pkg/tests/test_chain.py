import numpy as np
import pytest

from helpers import U1, chain2, random_chain, ring3
from permasoup.chain import (ChainError, ChainSpec, compute_u1, compute_uT0, h_transform,
                             invariant_measure, sample_paths, simulate_local_times, uT0_full,
                             verify_inverse_local_time_identity, verify_isomorphism_moments)


def test_u1_single_state():
    assert compute_u1(ChainSpec.from_rates([[0.0]])).entries.tolist() == [[1.0]]


def test_u1_two_state():
    u = compute_u1(chain2()).entries
    assert np.max(np.abs(u - U1)) < 1e-14


def test_u1_residual_random():
    rng = np.random.default_rng(1)
    for _ in range(50):
        c = random_chain(rng, int(rng.integers(1, 21)))
        u = compute_u1(c).entries
        assert np.abs((np.eye(c.n) - c.generator()) @ u - np.eye(c.n)).max() < 1e-12
        assert np.all(u <= np.diag(u)[None, :] + 1e-12)


def test_chain_rejects_bad_rates():
    with pytest.raises(ChainError):
        ChainSpec.from_rates([[0.0, -1.0], [1.0, 0.0]])
    with pytest.raises(ChainError):
        ChainSpec.from_rates([[1.0, 1.0], [1.0, 0.0]])


def test_uT0_two_state():
    k = compute_uT0(chain2().without_killing(), "2")
    assert k.labels == ("1",)
    assert k.entries[0, 0] == pytest.approx(1.0)
    assert k.killed_at_root


def test_uT0_root_only():
    assert compute_uT0(ChainSpec.from_rates([[0.0]]), "1") is None


def test_uT0_ring():
    full = uT0_full(ring3(), "3")
    assert np.all(full >= 0)
    q = ring3().generator()[:2, :2]
    assert np.allclose(-q @ full[:2, :2], np.eye(2))
    assert np.all(full[2] == 0) and np.all(full[:, 2] == 0)


def test_uT0_unreachable_root():
    c = ChainSpec.from_rates([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ChainError):
        compute_uT0(c, "2")


def test_invariant_measure():
    assert np.allclose(invariant_measure(chain2()), [2 / 3, 1 / 3])


def test_h_transform_rates():
    c = chain2()
    ht = h_transform(c, compute_u1(c), "1")
    assert np.allclose(ht.chain.jump_rates, [[0, 2 / 3], [3, 0]])
    assert np.allclose(ht.chain.kill_rates, [4 / 3, 0])
    assert ht.audit_residual < 1e-12
    ht2 = h_transform(c, compute_u1(c), "2")
    assert np.allclose(ht2.chain.jump_rates, [[0, 2], [1, 0]])
    assert np.allclose(ht2.chain.kill_rates, [0, 2])


def test_local_time_means():
    c = chain2()
    f = simulate_local_times(c, "1", 3, 100_000)
    se = f.std(axis=0, ddof=1) / np.sqrt(f.shape[0])
    assert np.all(np.abs(f.mean(axis=0) - U1[0]) < 4 * se)


def test_single_state_local_time_is_exponential():
    f = simulate_local_times(ChainSpec.from_rates([[0.0]]), "1", 4, 50_000)[:, 0]
    assert abs(f.mean() - 1.0) < 4 * f.std() / np.sqrt(f.size)


def test_local_times_reproducible_across_workers():
    a = simulate_local_times(chain2(), "1", 9, 10_000, workers=1)
    b = simulate_local_times(chain2(), "1", 9, 10_000, workers=3)
    assert np.array_equal(a, b)


def test_sample_paths_structure():
    paths = sample_paths(chain2(), "1", 2, 50)
    assert len(paths) == 50
    for p in paths:
        assert p.start == "1" and p.visits[0][0] == "1"
        assert all(t > 0 for _, t in p.visits)
        assert p.death_cause == "killed"


def test_isomorphism_moments_two_state():
    checks = verify_isomorphism_moments(chain2(), "1", 5, 100_000)
    assert all(c.passed for c in checks)
    target = {c.name: c.target for c in checks}
    assert target["E_h[L(2)]"] == pytest.approx(1 / 6)


def test_inverse_local_time_identity_symmetric():
    c = ChainSpec.from_rates([[0.0, 1.0], [1.0, 0.0]])
    rep = verify_inverse_local_time_identity(c, "2", 11, 100_000)
    assert rep.passed
    assert rep.target[0, 0] == pytest.approx(2.0)


def test_inverse_local_time_identity_needs_invariant_counting_measure():
    with pytest.raises(ChainError):
        verify_inverse_local_time_identity(chain2(), "2", 1, 1000)
