import math

import numpy as np
import pytest

from helpers import U1, random_chain_kernel, random_psd_kernel
from permasoup.kernel import (D_SCALE, IndexSet, InvariantViolation, Kernel, KernelError,
                              check_shift_monotonicity, check_sufficient_admissibility, metric,
                              shift_kernel, triple_determinants, validate_kernel,
                              verify_metric_relations)


def test_single_point_kernel_is_valid():
    assert validate_kernel(Kernel.from_matrix([[1.0]])).valid


def test_minor_violation_is_reported_with_margin():
    rep = validate_kernel(Kernel.from_matrix([[1.0, 2.0], [2.0, 1.0]]))
    assert not rep.valid
    assert rep["minor_2x2"].margin == pytest.approx(-3.0)
    assert rep["minor_2x2"].worst_pair == ("1", "2")
    assert rep["diag_nonneg"].passed and rep["product_nonneg"].passed


def test_chain_potential_is_valid():
    assert validate_kernel(Kernel.from_matrix(U1)).valid


def test_negative_diagonal_fails():
    rep = validate_kernel(Kernel.from_matrix([[-1.0, 0.0], [0.0, 1.0]]))
    assert not rep["diag_nonneg"].passed


def test_malformed_kernels_rejected():
    with pytest.raises(KernelError):
        Kernel.from_matrix([[1.0, 2.0]])
    with pytest.raises(KernelError):
        Kernel.from_matrix([[np.nan]])
    with pytest.raises(KernelError):
        Kernel.from_matrix([[1.0]], beta=0.0)
    with pytest.raises(KernelError):
        IndexSet(("a", "a"))


def test_kernel_entries_are_read_only():
    k = Kernel.from_matrix(U1)
    with pytest.raises(ValueError):
        k.entries[0, 0] = 3.0


def test_sufficient_test_identity():
    rep = check_sufficient_admissibility(Kernel.from_matrix(np.eye(2)), (0.5, 1.0, 2.0))
    assert rep.passes and rep.verdict == "passes sufficient test"


def test_sufficient_test_chain_potential():
    rep = check_sufficient_admissibility(Kernel.from_matrix(U1))
    assert rep.passes
    assert np.allclose(np.sort(rep.eigenvalues.real), np.sort(np.roots([1, -1.25, 0.25])))


def test_sufficient_test_is_only_sufficient():
    g = np.array([[1.0, -0.5], [-0.5, 1.0]])
    rep = check_sufficient_admissibility(Kernel.from_matrix(g), (1.0,))
    assert rep.resolvent[1.0] == "negative"
    assert rep.resolvent_min[1.0] == pytest.approx(-0.5 / 3.75)
    assert rep.verdict == "indeterminate"
    # still a valid Gaussian-square kernel
    assert validate_kernel(Kernel.from_matrix(g)).valid


def test_d_perfect_correlation_is_zero():
    assert metric(Kernel.from_matrix([[1.0, 1.0], [1.0, 1.0]]), "d").values[0, 1] == 0.0


def test_d_identity():
    v = metric(Kernel.from_matrix(np.eye(2)), "d").values[0, 1]
    assert v == pytest.approx(4 * math.sqrt(2 / 3) * math.sqrt(2))
    assert v == pytest.approx(4.6188, abs=1e-4)


def test_dbar_chain_potential():
    v = metric(Kernel.from_matrix(U1), "dbar").values[0, 1]
    assert v == pytest.approx(math.sqrt(1.25 - 2 * math.sqrt(0.125)), abs=1e-14)
    assert v == pytest.approx(0.73680, abs=5e-5)


def test_d_is_scaled_dbar():
    k = Kernel.from_matrix(U1)
    assert np.allclose(metric(k, "d").values, D_SCALE * metric(k, "dbar").values, rtol=1e-15)


def test_metric_tables_symmetric_zero_diagonal():
    rng = np.random.default_rng(3)
    for _ in range(20):
        k = random_chain_kernel(rng)
        for kind in ("d", "dbar", "d2", "d3", "dtheta", "dhat_theta"):
            v = metric(k, kind).values
            assert np.allclose(v, v.T, atol=1e-12)
            assert np.all(np.diag(v) == 0)
            assert np.all(v >= 0)


def test_dhat_theta_closed_form():
    k = Kernel.from_matrix(U1, beta=0.5)
    v = metric(k, "dhat_theta").values[0, 1]
    assert v == pytest.approx(math.sqrt(2 * (0.75**2 + 0.25 - 2 * 0.125)), abs=1e-14)


def test_d2_needs_nonnegative_kernel():
    with pytest.raises(InvariantViolation):
        metric(Kernel.from_matrix([[1.0, -0.5], [-0.5, 1.0]]), "d2")


def test_kappa_needs_killed_kernel():
    with pytest.raises(KernelError):
        metric(Kernel.from_matrix(U1), "kappa")
    k = Kernel.from_matrix(np.array([[2.0, 1.0], [1.0, 1.0]]), killed_at_root=True)
    assert metric(k, "kappa").values[0, 1] == pytest.approx(1.0)


def test_relations_identity_strict():
    rep = verify_metric_relations(Kernel.from_matrix(np.eye(2)))
    assert rep.passed
    for name in ("dhat_dtheta_lower", "dhat_dtheta_upper", "dhat_dbar_lower", "dhat_dbar_upper"):
        assert rep[name].margin > 0


def test_relations_chain_potential():
    rep = verify_metric_relations(Kernel.from_matrix(U1))
    assert rep.passed
    assert {"split_d2", "split_d3", "split_sum", "shift_monotone"} <= set(rep.names())


def test_relations_random_kernels():
    rng = np.random.default_rng(11)
    for _ in range(200):
        assert verify_metric_relations(random_chain_kernel(rng)).passed
        assert verify_metric_relations(random_psd_kernel(rng)).passed


def test_shift_ladder_strictly_decreasing():
    k = Kernel.from_matrix(U1)
    vals = [metric(shift_kernel(k, dl), "dbar").values[0, 1] for dl in (0.0, 1.0, 10.0)]
    assert vals[0] > vals[1] > vals[2]
    assert check_shift_monotonicity(k, (0.0, 1.0, 10.0)).passed


def test_shift_invariant_for_symmetric_kernel():
    k = Kernel.from_matrix([[2.0, 0.5], [0.5, 1.0]])
    assert metric(shift_kernel(k, 3.0), "dbar").values[0, 1] == pytest.approx(
        metric(k, "dbar").values[0, 1], abs=1e-14)
    assert shift_kernel(k, 0.0).entries.tolist() == k.entries.tolist()


def test_triple_determinants_diagnostic():
    assert triple_determinants(U1) == {"evaluated": False}
    res = triple_determinants(np.eye(3))
    assert res["evaluated"] and res["min_det"] == pytest.approx(1.0)
