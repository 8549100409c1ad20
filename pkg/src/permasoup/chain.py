"""Finite-state continuous-time Markov chains with exponential killing.

The reference measure on states is counting measure, so transition
densities are ``expm(t Q)``, the 1-potential is ``(I - Q)^{-1}`` and the
local time at a state is the total time spent there.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .checks import mean_check
from .kernel import IndexSet, Kernel
from .moments import isomorphism_moment
from .rng import concat_blocks, map_blocks, sub_seed

MAX_EVENTS = 10**9


class ChainError(ValueError):
    """Malformed or unsuitable chain."""


class RunawayPath(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainSpec:
    """Jump rates ``w[x, y]`` plus a per-state killing rate.

    ``kill_rates`` defaults to one everywhere (unit exponential killing).
    Chains without killing, used for hitting-time potentials, pass zeros.
    """

    states: IndexSet
    jump_rates: np.ndarray
    kill_rates: np.ndarray | None = None

    def __post_init__(self):
        w = np.array(self.jump_rates, dtype=float)
        n = len(self.states)
        if w.shape != (n, n):
            raise ChainError(f"jump_rates must be {n}x{n}, got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ChainError("jump rates must be finite and nonnegative")
        if np.any(np.diag(w) != 0):
            raise ChainError("jump rates must have a zero diagonal")
        kill = np.ones(n) if self.kill_rates is None else np.array(self.kill_rates, dtype=float)
        if kill.shape != (n,) or np.any(kill < 0) or not np.all(np.isfinite(kill)):
            raise ChainError("kill rates must be a finite nonnegative vector, one per state")
        w.setflags(write=False)
        kill.setflags(write=False)
        object.__setattr__(self, "jump_rates", w)
        object.__setattr__(self, "kill_rates", kill)

    @classmethod
    def from_rates(cls, jump_rates, labels=None, kill_rates=None) -> "ChainSpec":
        w = np.asarray(jump_rates, dtype=float)
        states = IndexSet.range(w.shape[0]) if labels is None else IndexSet(tuple(labels))
        return cls(states, w, kill_rates)

    def without_killing(self) -> "ChainSpec":
        return ChainSpec(self.states, self.jump_rates, np.zeros(self.n))

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def labels(self):
        return self.states.labels

    @property
    def holding_rates(self) -> np.ndarray:
        """Total jump rate ``d_x`` out of each state (killing not included)."""
        return self.jump_rates.sum(axis=1)

    def generator(self) -> np.ndarray:
        """Generator ``Q`` of the unkilled chain."""
        return self.jump_rates - np.diag(self.holding_rates)

    @property
    def has_unit_killing(self) -> bool:
        return bool(np.all(self.kill_rates == 1.0))


# ---------------------------------------------------------------------------
# potentials


def compute_u1(c: ChainSpec) -> Kernel:
    """1-potential density ``(I - Q)^{-1}`` of the chain."""
    n = c.n
    a = np.eye(n) - c.generator()
    try:
        u = np.linalg.solve(a, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise ChainError("I - Q is singular; chain input is corrupt") from exc
    if np.any(u < -1e-12):
        raise ChainError("1-potential has negative entries")
    u = np.clip(u, 0.0, None)
    resid = np.abs(a @ u - np.eye(n)).max()
    if resid > 1e-12 * max(1.0, np.abs(a).max()):
        raise ChainError(f"(I - Q) u1 = I residual {resid:.3e} too large")
    diag = np.diag(u)
    if np.any(u > diag[None, :] + 1e-12):
        raise ChainError("1-potential violates u(x, y) <= u(y, y)")
    return Kernel(c.states, u, 0.5)


def reachable_to(c: ChainSpec, target: int) -> np.ndarray:
    """Boolean mask of states from which ``target`` can be reached."""
    adj = c.jump_rates > 0
    seen = np.zeros(c.n, dtype=bool)
    seen[target] = True
    stack = [target]
    while stack:
        j = stack.pop()
        for i in np.flatnonzero(adj[:, j] & ~seen):
            seen[i] = True
            stack.append(int(i))
    return seen


def compute_uT0(c: ChainSpec, root) -> Kernel:
    """Potential of the unkilled chain stopped on first hitting ``root``.

    Returned over the remaining states as ``(-Q_restricted)^{-1}``.
    The kernel is flagged as killed at a root, which enables ``kappa``.
    """
    r = c.states.position(root)
    keep = [i for i in range(c.n) if i != r]
    if not keep:
        return None
    if not np.all(reachable_to(c, r)):
        raise ChainError("root is not reachable from every state; chain is not irreducible")
    q = c.generator()[np.ix_(keep, keep)]
    try:
        u = np.linalg.solve(-q, np.eye(len(keep)))
    except np.linalg.LinAlgError as exc:
        raise ChainError("restricted generator is singular; chain is not irreducible") from exc
    if np.any(u < -1e-12):
        raise ChainError("hitting-time potential has negative entries")
    return Kernel(c.states.subset(keep), np.clip(u, 0.0, None), 0.5, killed_at_root=True)


def uT0_full(c: ChainSpec, root) -> np.ndarray:
    """``compute_uT0`` padded back to all states, with zeros in the root row and column."""
    r = c.states.position(root)
    out = np.zeros((c.n, c.n))
    k = compute_uT0(c, root)
    if k is not None:
        keep = [i for i in range(c.n) if i != r]
        out[np.ix_(keep, keep)] = k.entries
    return out


def invariant_measure(c: ChainSpec) -> np.ndarray:
    """Invariant probability of the unkilled chain (least-squares solve of pi Q = 0)."""
    q = c.generator()
    a = np.vstack([q.T, np.ones(c.n)])
    b = np.zeros(c.n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    return pi


@dataclass(frozen=True)
class HTransform:
    chain: ChainSpec
    root: int
    h: np.ndarray
    audit_residual: float


def h_transform(c: ChainSpec, u1: Kernel, root) -> HTransform:
    """Doob transform by ``h(z) = u1(z, root)``.

    Jump rates become ``w(y, z) h(z) / h(y)``; the only killing left is at
    ``root``, at rate ``1 / u1(root, root)``. The audit residual is the
    largest deviation of total out-rates from the original ``1 + d_y``.
    """
    if not c.has_unit_killing:
        raise ChainError("h_transform expects a chain with unit killing")
    x = c.states.position(root)
    h = u1.entries[:, x].copy()
    if np.any(h <= 0):
        z = int(np.argmin(h))
        raise ChainError(f"h must be positive; h({c.labels[z]}) = {h[z]}")
    w = c.jump_rates * h[None, :] / h[:, None]
    kill = np.zeros(c.n)
    kill[x] = 1.0 / u1.entries[x, x]
    out = ChainSpec(c.states, w, kill)
    total = w.sum(axis=1) + kill
    audit = float(np.abs(total - (1.0 + c.holding_rates)).max())
    return HTransform(out, x, h, audit)


# ---------------------------------------------------------------------------
# simulation


@dataclass
class PathSample:
    start: str
    visits: list[tuple[str, float]]
    death_cause: str

    @property
    def lifetime(self) -> float:
        return float(sum(t for _, t in self.visits))


def _jump_table(c: ChainSpec):
    """Per-state total rate and cumulative exit probabilities (last column = death)."""
    rates = c.holding_rates + c.kill_rates
    if np.any(rates <= 0):
        i = int(np.argmin(rates))
        raise ChainError(f"state {c.labels[i]} has no exit; paths would never die")
    probs = np.hstack([c.jump_rates, c.kill_rates[:, None]]) / rates[:, None]
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    return rates, cum


def _simulate_block(c: ChainSpec, start: int, rng: np.random.Generator, size: int,
                    record: bool = False):
    rates, cum = _jump_table(c)
    n = c.n
    field = np.zeros((size, n))
    state = np.full(size, start, dtype=np.intp)
    alive = np.arange(size)
    log = []
    events = 0
    while alive.size:
        s = state[alive]
        hold = rng.exponential(1.0, alive.size) / rates[s]
        np.add.at(field, (alive, s), hold)
        u = rng.random(alive.size)
        nxt = (u[:, None] >= cum[s]).sum(axis=1)
        nxt = np.minimum(nxt, n)
        if record:
            log.append((alive.copy(), s.copy(), hold))
        died = nxt == n
        state[alive] = np.where(died, state[alive], nxt)
        alive = alive[~died]
        events += s.size
        if events > MAX_EVENTS:
            raise RunawayPath("runaway path")
    return (field, log) if record else field


def simulate_local_times(c: ChainSpec, start, seed: int, n_paths: int,
                         workers: int | None = None) -> np.ndarray:
    """Total local times of ``n_paths`` independent paths started at ``start``.

    Returns an ``(n_paths, n_states)`` array. Each fixed-size block of paths
    uses its own derived stream, so row ``i`` depends only on ``seed`` and ``i``.
    """
    x = c.states.position(start)
    parts = map_blocks(lambda rng, size: _simulate_block(c, x, rng, size), n_paths, seed, workers)
    return concat_blocks(parts)


def sample_paths(c: ChainSpec, start, seed: int, n_paths: int) -> list[PathSample]:
    """Full event sequences for ``n_paths`` paths (same streams as the local-time sampler)."""
    x = c.states.position(start)
    kill_root = np.flatnonzero(c.kill_rates > 0)
    cause = "absorbed_at_htransform_root" if kill_root.size == 1 and not c.has_unit_killing \
        else "killed"

    def block(rng, size):
        _, log = _simulate_block(c, x, rng, size, record=True)
        visits = [[] for _ in range(size)]
        for idx, states, holds in log:
            for i, s, t in zip(idx.tolist(), states.tolist(), holds.tolist()):
                if visits[i] and visits[i][-1][0] == c.labels[s]:
                    raise AssertionError("consecutive states must differ")
                visits[i].append((c.labels[s], t))
        return [PathSample(c.labels[x], v, cause) for v in visits]

    return [p for part in map_blocks(block, n_paths, seed, 1) for p in part]


# ---------------------------------------------------------------------------
# inverse local time identity


@dataclass
class IdentityReport:
    root: str
    starts: list[str]
    labels: list[str]
    estimate: np.ndarray
    stderr: np.ndarray
    target: np.ndarray
    n_paths: int
    sigmas: float = 4.0
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(np.all(np.abs(self.estimate - self.target) < self.sigmas * self.stderr
                                  + 1e-15))

    def checks(self) -> list[dict]:
        out = []
        for a, x in enumerate(self.starts):
            for b, y in enumerate(self.labels):
                est, se, tgt = self.estimate[a, b], self.stderr[a, b], self.target[a, b]
                out.append({"name": f"u_tau({x},{y})", "target": float(tgt),
                            "estimate": float(est), "se": float(se),
                            "pass": bool(abs(est - tgt) < self.sigmas * se + 1e-15)})
        return out


def _inverse_local_time_block(c: ChainSpec, start: int, root: int, rng, size: int):
    d = c.holding_rates
    n = c.n
    probs = c.jump_rates / np.where(d > 0, d, 1.0)[:, None]
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    field = np.zeros((size, n))
    lam = rng.exponential(1.0, size)
    root_time = np.zeros(size)
    state = np.full(size, start, dtype=np.intp)
    alive = np.arange(size)
    events = 0
    while alive.size:
        s = state[alive]
        with np.errstate(divide="ignore"):
            hold = rng.exponential(1.0, alive.size) / d[s]
        at_root = s == root
        left = lam[alive] - root_time[alive]
        stop = at_root & (hold >= left)
        hold = np.where(stop, left, hold)
        np.add.at(field, (alive, s), hold)
        root_time[alive] += np.where(at_root, hold, 0.0)
        u = rng.random(alive.size)
        nxt = np.minimum((u[:, None] >= cum[s]).sum(axis=1), n - 1)
        state[alive] = np.where(stop, s, nxt)
        alive = alive[~stop]
        events += s.size
        if events > MAX_EVENTS:
            raise RunawayPath("runaway path")
    return field


def verify_inverse_local_time_identity(c: ChainSpec, root, seed: int, n_paths: int,
                                       starts: Sequence | None = None,
                                       workers: int | None = None) -> IdentityReport:
    """Check ``u_{tau(lambda)}(x, y) = u_{T0}(x, y) + 1`` by simulation.

    Paths of the unkilled chain run until the local time at ``root`` exceeds
    an independent Exp(1) level. The occupation of every ``y`` is compared
    with the hitting-time potential plus one, componentwise at 4 standard
    errors. The identity is stated for local times relative to an invariant
    reference measure, so counting measure must be invariant here.
    """
    c = c.without_killing()
    r = c.states.position(root)
    if c.n > 1 and not np.all(reachable_to(c, r)):
        raise ChainError("root is not reachable from every state; chain is not irreducible")
    d = c.holding_rates
    if c.n > 1 and np.any(d <= 0):
        raise ChainError("every state needs a positive jump rate")
    inflow = c.jump_rates.sum(axis=0)
    if not np.allclose(inflow, d, rtol=1e-12, atol=1e-12):
        raise ChainError("counting measure is not invariant for this chain "
                         "(column sums of the jump rates must equal the row sums)")
    starts = list(c.labels) if starts is None else [str(s) for s in starts]
    target = uT0_full(c, root) + 1.0
    est, se, tgt = [], [], []
    for i, x in enumerate(starts):
        xi = c.states.position(x)
        # stream offset keeps the starts independent of each other
        parts = map_blocks(lambda rng, size: _inverse_local_time_block(c, xi, r, rng, size),
                           n_paths, sub_seed(seed, i), workers)
        field = concat_blocks(parts)
        est.append(field.mean(axis=0))
        se.append(field.std(axis=0, ddof=1) / math.sqrt(n_paths))
        tgt.append(target[xi])
    return IdentityReport(c.labels[r], starts, list(c.labels), np.array(est), np.array(se),
                          np.array(tgt), n_paths)



def verify_isomorphism_moments(c: ChainSpec, root, seed: int, n_paths: int,
                               max_order: int = 2, workers: int | None = None) -> list:
    """Local-time moments of the h-transformed chain from ``root`` against the cyclic sums.

    Returns one :class:`~permasoup.checks.StatCheck` per multiset of states of
    size at most ``max_order``.
    """
    u1 = compute_u1(c)
    ht = h_transform(c, u1, root)
    fields = simulate_local_times(ht.chain, c.labels[ht.root], seed, n_paths, workers)
    checks = []
    for order in range(1, max_order + 1):
        for combo in itertools.combinations_with_replacement(range(c.n), order):
            prod = np.prod(fields[:, list(combo)], axis=1)
            target = isomorphism_moment(u1, ht.root, list(combo)).value
            name = "E_h[" + "*".join(f"L({c.labels[i]})" for i in combo) + "]"
            checks.append(mean_check(name, prod, target))
    return checks
