"""Exact sampling of Markov loop soups on a finite chain.

The loop measure splits into loops that never leave their base state and
loops that make at least two jumps. The first kind has infinite mass, but
its aggregate occupation at ``x`` is a Gamma(beta, 1 + d_x) variable,
independently over states. The second kind has finite mass

    ell = -log det(I - P),   P[x, y] = w[x, y] / (1 + d_x),

and a loop with ``k`` jumps is drawn by choosing ``k`` with probability
``tr(P^k) / (k ell)``, then a closed skeleton by bridge sampling on the jump
chain, then independent Exp(1 + d_x) holding times. A soup of order beta
holds Poisson(beta ell) such loops on top of the Gamma field.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .chain import ChainError, ChainSpec, compute_u1
from .checks import StatCheck, VerificationReport, mean_check
from .moments import laplace_transform, raw_moment
from .rng import concat_blocks, map_blocks, sub_seed

DEFAULT_TAIL = 1e-12
MAX_POWER_ENTRIES = 50_000_000


@dataclass(frozen=True)
class LoopKernelData:
    ptilde: np.ndarray
    powers: np.ndarray  # powers[k] = P^k for k = 0..k_max
    traces: np.ndarray  # traces[k] = tr(P^k), traces[0] unused
    total_mass: float
    k_max: int
    tail_bound: float
    holding: np.ndarray  # 1 + d_x
    k_probs: np.ndarray  # P(k) for k = 1..k_max, renormalised

    @property
    def n(self) -> int:
        return self.ptilde.shape[0]

    @property
    def truncated_mass(self) -> float:
        """Mass of loops with at most ``k_max`` jumps."""
        k = np.arange(1, self.k_max + 1)
        return float(np.sum(self.traces[1:] / k))


@dataclass
class LoopSample:
    skeleton: tuple[int, ...]
    holdings: tuple[float, ...]

    def occupation(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        np.add.at(out, list(self.skeleton), list(self.holdings))
        return out


@dataclass
class SoupRealization:
    beta: float
    trivial_field: np.ndarray
    loops: list[LoopSample]
    field: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.trivial_field.shape[0]
        total = self.trivial_field.copy()
        for loop in self.loops:
            total += loop.occupation(n)
        self.field = total
        assert np.all(self.field >= self.trivial_field)


def build_loop_kernel(c: ChainSpec, eps_tail: float = DEFAULT_TAIL) -> LoopKernelData:
    """Powers and traces of the jump matrix, truncated once the tail is below ``eps_tail``.

    For ``K`` jumps the neglected loop mass is bounded by
    ``n |P^K| / (K (1 - |P^K|^(1/K)))`` in the sup-norm; ``k_max`` is the
    first ``K`` where that drops below ``eps_tail``.
    """
    if not c.has_unit_killing:
        raise ChainError("loop soups are defined for chains with unit killing")
    n = c.n
    holding = 1.0 + c.holding_rates
    p = c.jump_rates / holding[:, None]
    sign, logdet = np.linalg.slogdet(np.eye(n) - p)
    if sign <= 0:
        raise ChainError("no killing / invalid chain")
    ell = -logdet

    powers = [np.eye(n), p.copy()]
    k = 1
    while True:
        pk = powers[-1]
        norm = float(np.abs(pk).sum(axis=1).max())
        if norm == 0.0:
            bound = 0.0
            break
        root = norm ** (1.0 / k)
        if not root < 1.0:
            raise ChainError("no killing / invalid chain")
        bound = n * norm / (k * (1.0 - root))
        if bound < eps_tail:
            break
        if (k + 2) * n * n > MAX_POWER_ENTRIES:
            raise ChainError("loop kernel needs too many matrix powers; chain mixes too slowly")
        powers.append(pk @ p)
        k += 1
    powers_arr = np.array(powers)
    traces = np.trace(powers_arr, axis1=1, axis2=2).copy()
    traces[0] = 0.0
    ks = np.arange(1, k + 1)
    series = float(np.sum(traces[1:] / ks))
    if abs(series - ell) > max(eps_tail, 1e-13 * max(1.0, ell)) + bound:
        raise ChainError(f"trace series {series!r} does not match -log det {ell!r}")
    probs = traces[1:] / ks
    probs = probs / probs.sum() if series > 0 else probs
    for arr in (p, powers_arr, traces, holding, probs):
        arr.setflags(write=False)
    return LoopKernelData(p, powers_arr, traces, float(ell), k, bound, holding, probs)


def sample_trivial_field(c: ChainSpec, beta: float, rng: np.random.Generator,
                         size: int | None = None) -> np.ndarray:
    """Aggregate occupation of the zero-jump loops: Gamma(beta, rate 1 + d_x) per state."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    shape = (c.n,) if size is None else (size, c.n)
    return rng.standard_gamma(beta, shape) / (1.0 + c.holding_rates)


def _sample_skeletons(lk: LoopKernelData, k: int, m: int, rng) -> np.ndarray:
    """``m`` closed skeletons with exactly ``k`` jumps, as an ``(m, k)`` state array."""
    pk = lk.powers
    n = lk.n
    diag = np.diag(pk[k])
    if not diag.sum() > 0:
        raise ChainError(f"no closed skeleton with {k} jumps")
    sk = np.empty((m, k), dtype=np.intp)
    sk[:, 0] = _categorical(np.broadcast_to(diag / diag.sum(), (m, n)), rng)
    x1 = sk[:, 0]
    for i in range(1, k):
        cur = sk[:, i - 1]
        # P(next = z) ~ P[cur, z] * P^{k-i}[z, x1]
        weights = lk.ptilde[cur] * pk[k - i][:, x1].T
        tot = weights.sum(axis=1, keepdims=True)
        if np.any(tot <= 0):
            raise ChainError("all-zero bridge row")
        sk[:, i] = _categorical(weights / tot, rng)
    return sk


def _categorical(probs: np.ndarray, rng) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    return np.minimum((u[:, None] >= cum).sum(axis=1), probs.shape[1] - 1)


def sample_loop_batch(lk: LoopKernelData, rng, m: int):
    """``m`` nontrivial loops as (lengths, skeleton list, holding list)."""
    if not lk.total_mass > 0:
        raise ValueError("chain has no nontrivial loops")
    ks = rng.choice(np.arange(1, lk.k_max + 1), size=m, p=lk.k_probs)
    skeletons: list = [None] * m
    for k in np.unique(ks):
        idx = np.flatnonzero(ks == k)
        sk = _sample_skeletons(lk, int(k), idx.size, rng)
        for j, row in zip(idx, sk):
            skeletons[j] = row
    holdings = [rng.exponential(1.0, sk.size) / lk.holding[sk] for sk in skeletons]
    return ks, skeletons, holdings


def sample_nontrivial_loop(lk: LoopKernelData, rng) -> LoopSample:
    _, sk, hold = sample_loop_batch(lk, rng, 1)
    return LoopSample(tuple(int(s) for s in sk[0]), tuple(float(t) for t in hold[0]))


def _soup_block(c: ChainSpec, lk: LoopKernelData, beta: float, rng, size: int) -> np.ndarray:
    fields = sample_trivial_field(c, beta, rng, size)
    if lk.total_mass > 0:
        counts = rng.poisson(beta * lk.truncated_mass, size)
        total = int(counts.sum())
        if total:
            owner = np.repeat(np.arange(size), counts)
            ks, sks, holds = sample_loop_batch(lk, rng, total)
            rows = np.repeat(owner, ks)
            cols = np.concatenate(sks)
            np.add.at(fields, (rows, cols), np.concatenate(holds))
    return fields


def sample_soup(c: ChainSpec, beta: float, seed: int, n_realizations: int,
                lk: LoopKernelData | None = None, workers: int | None = None) -> np.ndarray:
    """Occupation fields of ``n_realizations`` independent soups, shape ``(n, n_states)``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    lk = build_loop_kernel(c) if lk is None else lk
    parts = map_blocks(lambda rng, size: _soup_block(c, lk, beta, rng, size),
                       n_realizations, seed, workers)
    fields = concat_blocks(parts)
    if np.any(fields < 0):
        raise AssertionError("negative occupation field")
    return fields


def sample_soup_realizations(c: ChainSpec, beta: float, rng, n_realizations: int,
                             lk: LoopKernelData | None = None) -> list[SoupRealization]:
    """Soups with their loops kept, for inspection; slower than :func:`sample_soup`."""
    lk = build_loop_kernel(c) if lk is None else lk
    out = []
    for _ in range(n_realizations):
        trivial = sample_trivial_field(c, beta, rng)
        loops = []
        if lk.total_mass > 0:
            m = int(rng.poisson(beta * lk.truncated_mass))
            if m:
                _, sks, holds = sample_loop_batch(lk, rng, m)
                loops = [LoopSample(tuple(int(s) for s in sk), tuple(float(t) for t in h))
                         for sk, h in zip(sks, holds)]
        out.append(SoupRealization(beta, trivial, loops))
    return out


def loop_measure_first_moment(c: ChainSpec, seed: int, m: int,
                              lk: LoopKernelData | None = None):
    """Estimate mu(L^x) from sampled loops; returns (estimate, standard error).

    The zero-jump part contributes ``1 / (1 + d_x)`` exactly and the
    nontrivial part is ``ell`` times the mean loop occupation.
    """
    lk = build_loop_kernel(c) if lk is None else lk
    trivial = 1.0 / lk.holding
    if not lk.total_mass > 0:
        return trivial, np.zeros(c.n)

    def block(rng, size):
        ks, sks, holds = sample_loop_batch(lk, rng, size)
        occ = np.zeros((size, c.n))
        np.add.at(occ, (np.repeat(np.arange(size), ks), np.concatenate(sks)),
                  np.concatenate(holds))
        return occ

    occ = concat_blocks(map_blocks(block, m, seed))
    mass = lk.truncated_mass
    est = trivial + mass * occ.mean(axis=0)
    se = mass * occ.std(axis=0, ddof=1) / math.sqrt(m)
    return est, se


DEFAULT_LAPLACE_WEIGHTS = ((1.0, 1.0), (0.5, 2.0), (3.0, 0.25))


def _default_weights(n: int) -> list[np.ndarray]:
    out = []
    for base in DEFAULT_LAPLACE_WEIGHTS:
        out.append(np.resize(np.asarray(base), n))
    return out


def moment_checks(theta: np.ndarray, kernel, beta: float, max_order: int,
                  labels: Sequence[str]) -> list[StatCheck]:
    """Empirical mixed moments of ``theta`` against the permutation formula."""
    checks = []
    n = theta.shape[1]
    for order in range(1, max_order + 1):
        for combo in itertools.combinations_with_replacement(range(n), order):
            prod = np.prod(theta[:, list(combo)], axis=1)
            target = raw_moment(kernel, list(combo), beta)
            name = "E[" + "*".join(f"theta({labels[i]})" for i in combo) + "]"
            checks.append(mean_check(name, prod, target))
    return checks


def laplace_checks(theta: np.ndarray, kernel, beta: float, weights) -> list[StatCheck]:
    checks = []
    for w in weights:
        w = np.asarray(w, dtype=float)
        vals = np.exp(-0.5 * theta @ w)
        target = laplace_transform(kernel, w, beta)
        checks.append(mean_check(f"laplace{tuple(float(x) for x in w)}", vals, target))
    return checks


def verify_soup(c: ChainSpec, beta: float, seed: int, n_realizations: int, max_order: int = 3,
                weights=None, workers: int | None = None) -> VerificationReport:
    """Compare a sampled soup with the beta-permanental process of kernel u1.

    Mixed moments of ``theta = 2 * field`` up to ``max_order`` and the
    Laplace functional at several weight vectors, each at 4 standard errors.
    For a single state the Kolmogorov distance to Gamma(beta, 1) is reported.
    """
    if not 1 <= max_order <= 4:
        raise ValueError("max_order must be between 1 and 4")
    lk = build_loop_kernel(c)
    u1 = compute_u1(c)
    fields = sample_soup(c, beta, seed, n_realizations, lk, workers)
    theta = 2.0 * fields
    checks = moment_checks(theta, u1, beta, max_order, c.labels)
    weights = _default_weights(c.n) if weights is None else weights
    checks += laplace_checks(theta, u1, beta, weights)
    meta = {"beta": beta, "n_realizations": n_realizations, "seed": seed,
            "total_mass": lk.total_mass, "k_max": lk.k_max, "tail_bound": lk.tail_bound}
    if c.n == 1 and c.holding_rates[0] == 0:
        ks = stats.kstest(fields[:, 0], stats.gamma(beta).cdf)
        meta["ks_distance_gamma"] = float(ks.statistic)
    return VerificationReport(checks, meta)


def ks_distance_single_state(beta: float, seed: int, n: int) -> float:
    """Kolmogorov distance between a one-state soup field and Gamma(beta, 1)."""
    c = ChainSpec.from_rates([[0.0]])
    fields = sample_soup(c, beta, seed, n)
    return float(stats.kstest(fields[:, 0], stats.gamma(beta).cdf).statistic)


def additivity_checks(c: ChainSpec, beta1: float, beta2: float, seed: int, n: int,
                      max_order: int = 3) -> list[StatCheck]:
    """Two-sample comparison of a sum of independent soups with one soup of the summed order."""
    lk = build_loop_kernel(c)
    a = sample_soup(c, beta1, sub_seed(seed, 0), n, lk)
    b = sample_soup(c, beta2, sub_seed(seed, 1), n, lk)
    s = sample_soup(c, beta1 + beta2, sub_seed(seed, 2), n, lk)
    summed = a + b
    out = []
    for order in range(1, max_order + 1):
        for combo in itertools.combinations_with_replacement(range(c.n), order):
            x = np.prod(summed[:, list(combo)], axis=1)
            y = np.prod(s[:, list(combo)], axis=1)
            se = math.sqrt(x.var(ddof=1) / n + y.var(ddof=1) / n)
            out.append(StatCheck(f"sum vs joint {combo}", float(y.mean()), float(x.mean()), se))
    return out
