"""Majorizing-measure entropy integrals on finite index sets.

For a distance table ``m`` and probability weights ``mu``,

    J(a) = sup_t  int_0^a sqrt(log 1 / mu(B(t, u))) du

with closed balls ``B(t, u) = {s : m(t, s) <= u}``. On a finite set the ball
mass is a right-continuous step function of ``u`` with jumps at the sorted
distances from ``t``, so the integral is an exact finite sum.

On a fixed finite set J(delta) always tends to zero, so profiles here are
diagnostics. The refinement study recomputes them on nested grids to show
the trend as the mesh shrinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernel import IndexSet, Kernel, MetricTable, metric

WEIGHT_TOL = 1e-12
TIE_RTOL = 1e-14


class EntropyError(ValueError):
    pass


@dataclass(frozen=True)
class ProbabilityWeights:
    index: IndexSet
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (len(self.index.labels),):
            raise EntropyError("need one weight per index point")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise EntropyError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise EntropyError(f"weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, index: IndexSet) -> "ProbabilityWeights":
        n = len(index.labels)
        return cls(index, np.full(n, 1.0 / n))

    @classmethod
    def normalized(cls, index: IndexSet, raw) -> "ProbabilityWeights":
        raw = np.asarray(raw, dtype=float)
        return cls(index, raw / raw.sum())

    def restrict(self, positions: Sequence[int]) -> "ProbabilityWeights":
        pos = list(positions)
        sub = self.weights[pos]
        total = sub.sum()
        if not total > 0:
            raise EntropyError("restricted measure has zero mass")
        return ProbabilityWeights(self.index.subset(pos), sub / total)


def _check_pair(m: MetricTable, mu: ProbabilityWeights) -> None:
    if m.n != mu.weights.shape[0]:
        raise EntropyError("metric table and weights have different sizes")


def ball_mass(m: MetricTable, mu: ProbabilityWeights, center, radius: float) -> float:
    """mu of the closed ball of ``radius`` around ``center`` (a label or position)."""
    _check_pair(m, mu)
    if radius < 0:
        raise EntropyError("radius must be nonnegative")
    t = center if isinstance(center, (int, np.integer)) else m.index.position(center)
    return float(mu.weights[m.values[t] <= radius].sum())


def _per_center(values: np.ndarray, weights: np.ndarray, a: float) -> np.ndarray:
    order = np.argsort(values, axis=1, kind="stable")
    r = np.take_along_axis(values, order, axis=1)
    cum = np.cumsum(weights[order], axis=1)
    integrand = np.sqrt(np.clip(-np.log(np.minimum(cum[:, :-1], 1.0)), 0.0, None))
    clipped = np.minimum(r, a)
    widths = np.diff(clipped, axis=1)
    return (widths * integrand).sum(axis=1)


def _argmax_lowest(values: np.ndarray) -> int:
    top = values.max()
    return int(np.flatnonzero(values >= top - TIE_RTOL * abs(top))[0])


def entropy_integral_with_center(m: MetricTable, mu: ProbabilityWeights, a: float):
    """Exact J(a) and the position of the center attaining the sup."""
    _check_pair(m, mu)
    if a < 0:
        raise EntropyError("a must be nonnegative")
    if np.any(mu.weights <= 0):
        raise EntropyError("μ must charge every point")
    if m.n == 1:
        return 0.0, 0
    per = _per_center(m.values, mu.weights, float(a))
    t = _argmax_lowest(per)
    return float(per[t]), t


def entropy_integral(m: MetricTable, mu: ProbabilityWeights, a: float) -> float:
    return entropy_integral_with_center(m, mu, a)[0]


def entropy_integral_many(m: MetricTable, mu: ProbabilityWeights, a_values) -> np.ndarray:
    """Exact J at many arguments at once.

    Each center's integral is piecewise linear in ``a`` with knots at its
    sorted distances, so it is evaluated from cumulative sums at the knots.
    """
    _check_pair(m, mu)
    a = np.asarray(a_values, dtype=float)
    if np.any(a < 0):
        raise EntropyError("a must be nonnegative")
    if np.any(mu.weights <= 0):
        raise EntropyError("μ must charge every point")
    if m.n == 1:
        return np.zeros_like(a)
    order = np.argsort(m.values, axis=1, kind="stable")
    r = np.take_along_axis(m.values, order, axis=1)
    cum = np.cumsum(mu.weights[order], axis=1)
    slope = np.zeros_like(r)
    slope[:, :-1] = np.sqrt(np.clip(-np.log(np.minimum(cum[:, :-1], 1.0)), 0.0, None))
    knots = np.concatenate([np.zeros((m.n, 1)), np.cumsum(np.diff(r, axis=1) * slope[:, :-1],
                                                         axis=1)], axis=1)
    flat = a.ravel()
    best = np.zeros(flat.size)
    for t in range(m.n):
        j = np.searchsorted(r[t], flat, side="right") - 1
        j = np.clip(j, 0, m.n - 1)
        val = knots[t, j] + np.maximum(flat - r[t, j], 0.0) * slope[t, j]
        np.maximum(best, val, out=best)
    return best.reshape(a.shape)


def riemann_entropy_integral(m: MetricTable, mu: ProbabilityWeights, a: float,
                             step: float = 1e-5) -> float:
    """Left Riemann sum of the entropy integral, for cross-checking the exact sum."""
    if a <= 0:
        return 0.0
    grid = np.arange(0.0, a, step)
    widths = np.diff(np.append(grid, a))
    best = 0.0
    for t in range(m.n):
        r = m.values[t]
        order = np.argsort(r, kind="stable")
        cum = np.cumsum(mu.weights[order])
        idx = np.searchsorted(r[order], grid, side="right") - 1
        mass = np.minimum(cum[idx], 1.0)
        best = max(best, float(np.dot(widths, np.sqrt(np.clip(-np.log(mass), 0.0, None)))))
    return best


@dataclass
class EntropyProfile:
    deltas: np.ndarray
    values: np.ndarray
    sup_centers: list
    diameter: float
    refinement: dict = field(default_factory=dict)

    @property
    def j_over_delta(self) -> np.ndarray:
        return self.values / self.deltas

    def rows(self):
        for d, j, r, c in zip(self.deltas, self.values, self.j_over_delta, self.sup_centers):
            yield float(d), float(j), float(r), c


def parse_grid(text: str) -> np.ndarray:
    """``"lo:hi:log"`` (16 log-spaced points), ``"lo:hi:n:log"`` / ``":lin"``, or a comma list."""
    parts = text.split(":")
    if len(parts) == 1:
        grid = np.array([float(x) for x in text.split(",")])
    else:
        lo, hi = float(parts[0]), float(parts[1])
        count = int(parts[2]) if len(parts) == 4 else 16
        mode = parts[-1] if len(parts) >= 3 else "lin"
        if mode == "log":
            grid = np.geomspace(lo, hi, count)
        elif mode == "lin":
            grid = np.linspace(lo, hi, count)
        else:
            raise EntropyError(f"unknown grid spacing {mode!r}")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise EntropyError("grid must be positive and strictly increasing")
    return grid


def dyadic_grid(lo: float, hi: float, level: int) -> np.ndarray:
    """``2**level + 1`` points; grids at successive levels are nested."""
    return lo + (hi - lo) * np.arange(2**level + 1) / 2**level


def refinement_study(formula: Callable[[np.ndarray, np.ndarray], np.ndarray], kind: str,
                     lo: float, hi: float, levels: Sequence[int], deltas) -> dict:
    """Uniform-measure entropy profiles of ``formula`` on nested dyadic grids.

    Returns ``{level: J values over deltas}`` plus the ratio
    ``J(delta) / (delta sqrt(log 1/delta))`` for deltas below 1.
    """
    deltas = np.asarray(deltas, dtype=float)
    out = {}
    for level in levels:
        x = dyadic_grid(lo, hi, level)
        g = formula(x[:, None], x[None, :])
        k = Kernel(IndexSet.range(x.size), g, 0.5)
        table = metric(k, kind)
        mu = ProbabilityWeights.uniform(table.index)
        vals = np.array([entropy_integral(table, mu, d) for d in deltas])
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = deltas * np.sqrt(np.log(1.0 / deltas))
            ratio = np.where(deltas < 1.0, vals / scale, np.nan)
        out[int(level)] = {"points": int(x.size), "J": vals.tolist(), "ratio": ratio.tolist()}
    return out


def entropy_profile(m: MetricTable, mu: ProbabilityWeights, deltas,
                    formula: Callable | None = None, levels: Sequence[int] = (3, 4, 5, 6)
                    ) -> EntropyProfile:
    """J over a grid of deltas, with the sup center per delta.

    When ``m`` carries coordinates and ``formula`` gives the kernel as a
    function of two coordinate arrays, a refinement study over nested grids
    of the same range is attached.
    """
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas <= 0) or np.any(np.diff(deltas) <= 0):
        raise EntropyError("grid must be positive and strictly increasing")
    vals, centers = [], []
    for d in deltas:
        j, t = entropy_integral_with_center(m, mu, d)
        vals.append(j)
        centers.append(m.index.labels[t])
    prof = EntropyProfile(deltas, np.array(vals), centers, m.diameter)
    if formula is not None:
        coords = m.index.coordinates
        if coords is None:
            raise EntropyError("refinement study needs index coordinates")
        c = np.asarray(coords, dtype=float)
        if c.ndim == 2 and c.shape[1] != 1:
            raise EntropyError("refinement study needs one-dimensional coordinates")
        c = c.ravel()
        prof.refinement = refinement_study(formula, m.kind, float(c.min()), float(c.max()),
                                           levels, deltas)
    return prof


@dataclass(frozen=True)
class LocalFunctional:
    value: float
    loglog_term: float
    entropy_term: float
    members: tuple
    clamped: bool


def local_functional_terms(m: MetricTable, mu: ProbabilityWeights, t0, delta: float
                           ) -> LocalFunctional:
    """Both terms of the local functional at ``t0`` and scale ``delta``.

    The neighbourhood is open, ``{s : m(t0, s) < delta / 2}``; ``mu`` is
    renormalised on it and J is taken at ``delta / 4``. The log log factor is
    clamped at zero for ``delta >= 1/e``.
    """
    _check_pair(m, mu)
    if not delta > 0:
        raise EntropyError("delta must be positive")
    t = t0 if isinstance(t0, (int, np.integer)) else m.index.position(t0)
    members = np.flatnonzero(m.values[t] < delta / 2.0)
    if members.size == 0:
        raise EntropyError("empty neighbourhood")
    sub_mu = mu.restrict(members)
    sub_m = m.restrict(members)
    inner = math.log(1.0 / delta) if delta < 1.0 else 0.0
    ll = math.log(inner) if inner > 0 else 0.0
    clamped = ll <= 0.0
    first = delta * math.sqrt(max(ll, 0.0))
    jterm = entropy_integral(sub_m, sub_mu, delta / 4.0)
    return LocalFunctional(first + jterm, first, jterm,
                           tuple(m.index.labels[i] for i in members), clamped)


def local_functional(m: MetricTable, mu: ProbabilityWeights, t0, delta: float) -> float:
    return local_functional_terms(m, mu, t0, delta).value


def metric_splitting_check(k: Kernel, mu: ProbabilityWeights, a: float,
                           slack: float = 1e-10) -> dict:
    """d_bar <= d2 + d3 entrywise and the matching entropy-integral inequality."""
    dbar = metric(k, "dbar")
    d2 = metric(k, "d2")
    d3 = metric(k, "d3")
    summed = MetricTable(dbar.index, "d2+d3", d2.values + d3.values)
    entry_gap = float((dbar.values - summed.values).max())
    j_bar = entropy_integral(dbar, mu, a)
    j_sum = entropy_integral(summed, mu, a)
    return {"entrywise_gap": entry_gap, "J_dbar": j_bar, "J_sum": j_sum,
            "passed": entry_gap <= slack and j_bar <= j_sum + slack}
