"""Closed-form moments and Laplace transforms.

These are exact: determinants for the Laplace transform, and full
enumeration over permutations or set partitions for the moment formulas.
Every sampler in the package is checked against them, so nothing here is
approximate and oversized queries are refused rather than estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .kernel import Kernel, require_valid

MAX_PERMUTATION_POINTS = 10
MAX_PARTITION_POINTS = 8


class CapacityError(ValueError):
    """Query larger than the exact enumeration supports."""


class LaplaceError(ValueError):
    """det(I + A G) is not positive at the requested weights."""


@dataclass(frozen=True)
class MomentResult:
    value: float
    method: str
    enumeration_count: int


def _positions(k: Kernel, points) -> list[int]:
    pos = [p if isinstance(p, (int, np.integer)) and not isinstance(p, bool) else None
           for p in points]
    if all(p is not None for p in pos):
        for p in pos:
            if not 0 <= p < k.n:
                raise IndexError(f"point position {p} out of range")
        return [int(p) for p in pos]
    return k.index.positions(points)


def laplace_transform(k: Kernel, weights, beta: float | None = None) -> float:
    """``det(I + diag(weights) G) ** (-beta)``.

    The determinant comes from an LU factorisation with partial pivoting.
    Raises :class:`LaplaceError` when it is not positive.
    """
    beta = k.beta if beta is None else float(beta)
    w = np.asarray(weights, dtype=float)
    if w.shape != (k.n,):
        raise ValueError(f"need one weight per point ({k.n}), got shape {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    sign, logdet = np.linalg.slogdet(np.eye(k.n) + w[:, None] * k.entries)
    if sign <= 0:
        raise LaplaceError("kernel not Laplace-admissible at these weights")
    return float(math.exp(-beta * logdet))


def cycle_count(perm: Sequence[int]) -> int:
    n = len(perm)
    seen = [False] * n
    cycles = 0
    for start in range(n):
        if seen[start]:
            continue
        cycles += 1
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
    return cycles


_PERM_TABLES: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def permutation_table(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Every permutation of ``range(n)`` with its cycle count.

    Built by extension: each permutation of ``n - 1`` points yields one with
    ``n - 1`` as a new fixed point (one more cycle) and ``n - 1`` with the
    new point spliced into the cycle after ``j`` (same cycle count).
    """
    if n in _PERM_TABLES:
        return _PERM_TABLES[n]
    if n == 0:
        table = (np.zeros((1, 0), dtype=np.int8), np.zeros(1, dtype=np.int8))
    else:
        prev, prev_cycles = permutation_table(n - 1)
        m = prev.shape[0]
        perms = np.empty(((n) * m, n), dtype=np.int8)
        cycles = np.empty(n * m, dtype=np.int8)
        perms[:m, : n - 1] = prev
        perms[:m, n - 1] = n - 1
        cycles[:m] = prev_cycles + 1
        for j in range(n - 1):
            block = slice((j + 1) * m, (j + 2) * m)
            perms[block, : n - 1] = prev
            perms[block, j] = n - 1
            perms[block, n - 1] = prev[:, j]
            cycles[block] = prev_cycles
        table = (perms, cycles)
    for arr in table:
        arr.setflags(write=False)
    _PERM_TABLES[n] = table
    return table


def alpha_permanent(matrix: np.ndarray, beta: float) -> tuple[float, int]:
    """Sum over permutations of ``beta ** cycles(pi) * prod_j M[j, pi(j)]``."""
    n = matrix.shape[0]
    if n > MAX_PERMUTATION_POINTS:
        raise CapacityError(f"{n} points exceeds the enumeration cap of {MAX_PERMUTATION_POINTS}")
    perms, cycles = permutation_table(n)
    prod = np.ones(perms.shape[0])
    for j in range(n):
        prod *= matrix[j][perms[:, j]]
    powers = np.power(float(beta), np.arange(n + 1))
    return float(np.dot(powers[cycles], prod)), int(perms.shape[0])


def alpha_permanent_moment(k: Kernel, points, beta: float | None = None) -> MomentResult:
    """E(prod_j theta_{x_j} / 2) for a beta-permanental process with kernel ``k``.

    Repeated points are treated as distinct coordinates sharing a row and
    column of the kernel.
    """
    beta = k.beta if beta is None else float(beta)
    pos = _positions(k, points)
    if len(pos) < 1:
        raise ValueError("need at least one point")
    if len(pos) > MAX_PERMUTATION_POINTS:
        raise CapacityError(
            f"{len(pos)} points exceeds the enumeration cap of {MAX_PERMUTATION_POINTS}")
    sub = k.entries[np.ix_(pos, pos)]
    value, count = alpha_permanent(sub, beta)
    return MomentResult(value, "permutation", count)


def raw_moment(k: Kernel, points, beta: float | None = None) -> float:
    """E(prod_j theta_{x_j}) = 2^n times :func:`alpha_permanent_moment`."""
    pos = _positions(k, points)
    return 2.0 ** len(pos) * alpha_permanent_moment(k, pos, beta).value


def covariance_structure(k: Kernel, beta: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of theta at order beta.

    E theta_x = 2 beta G[x,x] and cov(theta_x, theta_y) = 4 beta G[x,y] G[y,x],
    which reduce to G[x,x] and 2 G[x,y] G[y,x] at beta = 1/2. Both are
    cross-checked against the permutation formula before returning.
    """
    require_valid(k)
    beta = k.beta if beta is None else float(beta)
    g = k.entries
    mean = 2.0 * beta * np.diag(g)
    cov = 4.0 * beta * g * g.T
    for i in range(k.n):
        m1 = raw_moment(k, [i], beta)
        if abs(m1 - mean[i]) > 1e-12 * max(1.0, abs(mean[i])):
            raise AssertionError(f"first moment mismatch at {k.labels[i]}")
        for j in range(i, k.n):
            m2 = raw_moment(k, [i, j], beta) - mean[i] * mean[j]
            if abs(m2 - cov[i, j]) > 1e-12 * max(1.0, abs(mean[i] * mean[j])):
                raise AssertionError(f"covariance mismatch at ({k.labels[i]}, {k.labels[j]})")
    return mean, cov


def loop_measure_moment(k: Kernel, points) -> MomentResult:
    """Loop-measure moment mu(prod_j L^{x_j}) as a sum over cyclic orders.

    The last point is held fixed and the other ``k - 1`` are permuted
    around the circle.
    """
    pos = _positions(k, points)
    n = len(pos)
    if n < 1:
        raise ValueError("need at least one point")
    if n > MAX_PERMUTATION_POINTS:
        raise CapacityError(f"{n} points exceeds the enumeration cap of {MAX_PERMUTATION_POINTS}")
    u = k.entries
    base = pos[-1]
    rest = np.asarray(pos[:-1], dtype=np.intp)
    perms, _ = permutation_table(n - 1)
    order = rest[perms.astype(np.intp)]
    prod = np.ones(order.shape[0])
    prev = np.full(order.shape[0], base, dtype=np.intp)
    for j in range(n - 1):
        prod *= u[prev, order[:, j]]
        prev = order[:, j]
    prod *= u[prev, base]
    total = float(prod.sum())
    count = int(order.shape[0])
    return MomentResult(total, "cyclic permutation", count)


def isomorphism_moment(k: Kernel, base, points) -> MomentResult:
    """E under the h-transform towards ``base`` of prod_j L^{x_j}_infinity.

    Equals the loop-measure moment with ``base`` appended, divided by
    ``u(base, base)``.
    """
    b = _positions(k, [base])[0]
    ubb = k.entries[b, b]
    if not ubb > 0:
        raise ValueError(f"u(x,x) must be positive at the base point {k.labels[b]}")
    pos = _positions(k, points) if len(points) else []
    lm = loop_measure_moment(k, pos + [b])
    return MomentResult(lm.value / ubb, "cyclic permutation / u(x,x)", lm.enumeration_count)


def set_partitions(items: Sequence[int]) -> Iterator[list[list[int]]]:
    """All set partitions of ``items`` (restricted-growth order)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def partition_moment(k: Kernel, points, beta: float | None = None,
                     check: bool = True) -> MomentResult:
    """Loop-soup moment E(prod_j L_hat^{x_j}) as a sum over set partitions.

    Each block contributes its loop-measure moment and each partition a
    factor ``beta ** blocks``. With ``check`` the result is compared with the
    permutation formula (same quantity, since theta = 2 L_hat) to 1e-10.
    """
    beta = k.beta if beta is None else float(beta)
    pos = _positions(k, points)
    n = len(pos)
    if n < 1:
        raise ValueError("need at least one point")
    if n > MAX_PARTITION_POINTS:
        raise CapacityError(f"{n} points exceeds the partition cap of {MAX_PARTITION_POINTS}")
    cache: dict[tuple[int, ...], float] = {}
    total = 0.0
    count = 0
    for part in set_partitions(range(n)):
        term = beta ** len(part)
        for block in part:
            key = tuple(block)
            if key not in cache:
                cache[key] = loop_measure_moment(k, [pos[j] for j in block]).value
            term *= cache[key]
        total += term
        count += 1
    if check:
        perm = alpha_permanent_moment(k, pos, beta).value
        if abs(total - perm) > 1e-10 * max(1.0, abs(perm)):
            raise AssertionError(
                f"partition sum {total!r} disagrees with permutation sum {perm!r}")
    return MomentResult(total, "set partition", count)
