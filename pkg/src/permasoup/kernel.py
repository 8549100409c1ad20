"""Kernels on finite index sets and the distance functions built from them.

A kernel is a square real matrix ``G`` indexed by labelled points. It is a
candidate kernel of a permanental process of order ``beta`` when

    E exp(-1/2 sum_i a_i theta_i) = det(I + diag(a) G) ** (-beta).

Nothing forces ``G`` to be symmetric, so the checks below separate what is
necessary (nonnegative diagonal, nonnegative products ``G[x,y] G[y,x]``,
nonnegative 2x2 minors) from what is merely sufficient (positive real
eigenvalues and a nonnegative resolvent).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Radicands in [-RADICAND_TOL, 0) clamp to zero; anything lower is an error.
RADICAND_TOL = 1e-12
#: Rounding slack for the necessary kernel conditions.
CHECK_SLACK = 1e-12
#: Slack in the metric comparison inequalities.
RELATION_SLACK = 1e-10
EIGEN_IMAG_TOL = 1e-9
DEFAULT_R_GRID = tuple(2.0**k for k in range(-6, 7))

#: sqrt(2) / (sqrt(2) + 1), the constant in the d_theta comparisons.
K_CONST = math.sqrt(2.0) / (math.sqrt(2.0) + 1.0)
#: 4 sqrt(2/3), the factor between d and dbar.
D_SCALE = 4.0 * math.sqrt(2.0 / 3.0)

METRIC_KINDS = ("d", "dbar", "d2", "d3", "dtheta", "dhat_theta", "kappa")


class KernelError(ValueError):
    """Structurally malformed kernel input (shape, non-finite entries, labels)."""


class InvariantViolation(ValueError):
    """A quantity that must be nonnegative came out negative beyond rounding."""


@dataclass(frozen=True)
class IndexSet:
    labels: tuple[str, ...]
    coordinates: np.ndarray | None = None

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 1:
            raise KernelError("index set must contain at least one point")
        if len(set(labels)) != len(labels):
            raise KernelError("index labels must be distinct")
        if self.coordinates is not None:
            coords = np.asarray(self.coordinates, dtype=float)
            if coords.ndim == 1:
                coords = coords[:, None]
            if coords.shape[0] != len(labels):
                raise KernelError("need exactly one coordinate vector per label")
            object.__setattr__(self, "coordinates", coords)

    def __len__(self) -> int:
        return len(self.labels)

    def position(self, label) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise KernelError(f"label {label!r} not in index set") from None

    def positions(self, labels: Iterable) -> list[int]:
        return [self.position(x) for x in labels]

    def subset(self, positions: Sequence[int]) -> "IndexSet":
        coords = None if self.coordinates is None else self.coordinates[list(positions)]
        return IndexSet(tuple(self.labels[i] for i in positions), coords)

    @classmethod
    def range(cls, n: int, start: int = 1) -> "IndexSet":
        return cls(tuple(str(i) for i in range(start, start + n)))


@dataclass(frozen=True)
class Kernel:
    """Square kernel matrix over an :class:`IndexSet`.

    ``killed_at_root`` marks the potential of a chain killed on hitting a
    distinguished state; only such kernels have a ``kappa`` table.
    """

    index: IndexSet
    entries: np.ndarray
    beta: float = 0.5
    killed_at_root: bool = False

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise KernelError(f"kernel must be a square matrix, got shape {entries.shape}")
        if entries.shape[0] != len(self.index):
            raise KernelError("kernel size does not match the index set")
        if not np.all(np.isfinite(entries)):
            raise KernelError("kernel entries must be finite")
        if not self.beta > 0 or not math.isfinite(self.beta):
            raise KernelError(f"order beta must be positive, got {self.beta}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def from_matrix(cls, entries, labels=None, beta: float = 0.5, **kw) -> "Kernel":
        entries = np.asarray(entries, dtype=float)
        if entries.ndim != 2:
            raise KernelError(f"kernel must be a square matrix, got shape {entries.shape}")
        index = IndexSet.range(entries.shape[0]) if labels is None else IndexSet(tuple(labels))
        return cls(index, entries, beta, **kw)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def labels(self) -> tuple[str, ...]:
        return self.index.labels

    def with_entries(self, entries) -> "Kernel":
        return Kernel(self.index, entries, self.beta, self.killed_at_root)

    def restrict(self, positions: Sequence[int]) -> "Kernel":
        pos = list(positions)
        return Kernel(self.index.subset(pos), self.entries[np.ix_(pos, pos)], self.beta,
                      self.killed_at_root)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.entries - self.entries.T) <= tol))


# ---------------------------------------------------------------------------
# validation


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float
    worst_pair: tuple[str, str] | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "margin": float(self.margin),
                "worst_pair": list(self.worst_pair) if self.worst_pair else None,
                "detail": self.detail}


@dataclass
class ValidationReport:
    checks: list[CheckResult]

    @property
    def valid(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"valid": self.valid, "checks": [c.to_dict() for c in self.checks]}


def _worst(values: np.ndarray, labels, mask: np.ndarray | None = None):
    """Minimum of a pairwise table (optionally masked) and the pair attaining it."""
    vals = np.where(mask, values, np.inf) if mask is not None else values
    if not np.any(np.isfinite(vals)):
        return math.inf, None
    flat = int(np.argmin(vals))
    i, j = divmod(flat, vals.shape[1])
    return float(vals[i, j]), (labels[i], labels[j])


def validate_kernel(k: Kernel) -> ValidationReport:
    """Run the necessary conditions every permanental kernel satisfies.

    Each check reports its smallest margin and the pair where it occurs;
    a check passes when the margin is at least ``-CHECK_SLACK``.
    """
    g = k.entries
    labels = k.labels
    diag = np.diag(g)
    prod = g * g.T
    minor = np.outer(diag, diag) - prod

    checks = []
    i = int(np.argmin(diag))
    checks.append(CheckResult("diag_nonneg", bool(diag[i] >= -CHECK_SLACK), float(diag[i]),
                              (labels[i], labels[i]), "G[x,x] >= 0"))
    m, pair = _worst(prod, labels)
    checks.append(CheckResult("product_nonneg", m >= -CHECK_SLACK, m, pair,
                              "G[x,y] G[y,x] >= 0"))
    m, pair = _worst(minor, labels)
    checks.append(CheckResult("minor_2x2", m >= -CHECK_SLACK, m, pair,
                              "G[x,x] G[y,y] - G[x,y] G[y,x] >= 0"))
    return ValidationReport(checks)


def require_valid(k: Kernel) -> None:
    report = validate_kernel(k)
    if not report.valid:
        bad = [c for c in report.checks if not c.passed][0]
        raise InvariantViolation(
            f"kernel fails {bad.name} at pair {bad.worst_pair} (margin {bad.margin:.3e})")


@dataclass
class AdmissibilityReport:
    eigenvalues: np.ndarray
    eigen_ok: bool
    resolvent: dict[float, str]
    resolvent_min: dict[float, float]
    note: str = ("sufficient condition only: a failed test does not show that the kernel "
                 "is inadmissible; the r grid samples the condition 'for all r > 0'")

    @property
    def resolvent_ok(self) -> bool:
        return all(v == "ok" for v in self.resolvent.values())

    @property
    def passes(self) -> bool:
        return self.eigen_ok and self.resolvent_ok

    @property
    def verdict(self) -> str:
        return "passes sufficient test" if self.passes else "indeterminate"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "passes": self.passes,
            "eigen_ok": self.eigen_ok,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "resolvent": {repr(r): v for r, v in self.resolvent.items()},
            "resolvent_min": {repr(r): float(v) for r, v in self.resolvent_min.items()},
            "note": self.note,
        }


def real_nonzero_eigenvalues_positive(g: np.ndarray, tol: float = EIGEN_IMAG_TOL):
    eig = np.linalg.eigvals(g)
    real = eig[np.abs(eig.imag) <= tol].real
    nonzero = real[np.abs(real) > tol]
    return eig, bool(np.all(nonzero > 0))


def check_sufficient_admissibility(k: Kernel, r_grid: Sequence[float] = DEFAULT_R_GRID
                                   ) -> AdmissibilityReport:
    """Test the sufficient existence condition for a permanental process.

    All real nonzero eigenvalues must be positive and ``r G (I + r G)^{-1}``
    must be entrywise nonnegative for every ``r`` on the grid. A singular
    ``I + r G`` marks that ``r`` as inconclusive.
    """
    require_valid(k)
    if len(r_grid) == 0:
        raise ValueError("r_grid must be nonempty")
    g = k.entries
    eig, eig_ok = real_nonzero_eigenvalues_positive(g)
    status: dict[float, str] = {}
    mins: dict[float, float] = {}
    eye = np.eye(k.n)
    for r in r_grid:
        if not r > 0:
            raise ValueError("r_grid entries must be positive")
        a = eye + r * g
        if abs(np.linalg.det(a)) < 1e-14 or np.linalg.cond(a) > 1e14:
            status[float(r)] = "inconclusive"
            mins[float(r)] = math.nan
            continue
        res = r * g @ np.linalg.inv(a)
        mins[float(r)] = float(res.min())
        status[float(r)] = "ok" if res.min() >= -CHECK_SLACK else "negative"
    return AdmissibilityReport(eig, eig_ok, status, mins)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricTable:
    index: IndexSet
    kind: str
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def scaled(self, c: float) -> "MetricTable":
        return MetricTable(self.index, self.kind, c * self.values)

    def restrict(self, positions: Sequence[int]) -> "MetricTable":
        pos = list(positions)
        return MetricTable(self.index.subset(pos), self.kind, self.values[np.ix_(pos, pos)])

    @property
    def diameter(self) -> float:
        return float(self.values.max())


def _safe_sqrt(radicand: np.ndarray, labels, what: str, scale: np.ndarray | float = 1.0):
    """Square root of a pairwise table, clamping rounding-level negatives."""
    tol = RADICAND_TOL * np.maximum(1.0, scale)
    bad = radicand < -tol
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise InvariantViolation(
            f"{what}: negative radicand {radicand[i, j]:.3e} at pair ({labels[i]}, {labels[j]})")
    out = np.sqrt(np.clip(radicand, 0.0, None))
    np.fill_diagonal(out, 0.0)
    return out


def _pair_products(g: np.ndarray) -> np.ndarray:
    prod = g * g.T
    return np.clip(prod, 0.0, None)


def dbar_values(g: np.ndarray, labels) -> np.ndarray:
    diag = np.diag(g)
    s = np.sqrt(_pair_products(g))
    scale = np.add.outer(np.abs(diag), np.abs(diag))
    return _safe_sqrt(np.add.outer(diag, diag) - 2.0 * s, labels, "dbar", scale)


def d2_values(g: np.ndarray, labels) -> np.ndarray:
    diag = np.diag(g)
    a = np.abs(g)
    scale = np.add.outer(np.abs(diag), np.abs(diag))
    return _safe_sqrt(np.add.outer(diag, diag) - (a + a.T), labels, "d2", scale)


def dhat_theta_sq(g: np.ndarray, beta: float = 0.5) -> np.ndarray:
    """Variance of theta_x - theta_y; at beta = 1/2 this is 2(Gxx^2+Gyy^2-2GxyGyx)."""
    diag = np.diag(g)
    sq = diag**2
    return 4.0 * beta * (np.add.outer(sq, sq) - 2.0 * g * g.T)


def metric(k: Kernel, kind: str) -> MetricTable:
    """Pairwise distance table of the requested ``kind``.

    ``d`` and ``dbar`` differ by the constant ``4 sqrt(2/3)``. ``d2`` and
    ``d3`` need a nonnegative kernel. ``dtheta`` and ``dhat_theta`` are the
    L2 distances of the raw and centred process, evaluated from its first two
    moments at order ``k.beta``. ``kappa`` needs a killed-at-root kernel.
    """
    if kind not in METRIC_KINDS:
        raise ValueError(f"unknown metric kind {kind!r}; expected one of {METRIC_KINDS}")
    require_valid(k)
    g = k.entries
    labels = k.labels
    diag = np.diag(g)
    scale = np.add.outer(np.abs(diag), np.abs(diag))

    if kind in ("d", "dbar"):
        vals = dbar_values(g, labels)
        if kind == "d":
            vals = D_SCALE * vals
    elif kind in ("d2", "d3"):
        if np.any(g < 0):
            raise InvariantViolation(f"{kind} requires a kernel with nonnegative entries")
        if kind == "d2":
            vals = d2_values(g, labels)
        else:
            r = np.sqrt(g)
            vals = np.abs(r - r.T)
            np.fill_diagonal(vals, 0.0)
    elif kind == "dhat_theta":
        vals = _safe_sqrt(dhat_theta_sq(g, k.beta), labels, "dhat_theta", scale**2)
    elif kind == "dtheta":
        mean = 2.0 * k.beta * diag
        rad = dhat_theta_sq(g, k.beta) + np.subtract.outer(mean, mean) ** 2
        vals = _safe_sqrt(rad, labels, "dtheta", scale**2)
    else:
        if not k.killed_at_root:
            raise KernelError("kappa is defined only for a kernel killed at a root state")
        vals = _safe_sqrt(np.add.outer(diag, diag) - (g + g.T), labels, "kappa", scale)
    return MetricTable(k.index, kind, vals)


def gaussian_distance(k: Kernel) -> np.ndarray:
    """L2 distance of the Gaussian process with covariance ``k`` (symmetric case)."""
    g = k.entries
    diag = np.diag(g)
    return _safe_sqrt(np.add.outer(diag, diag) - 2.0 * g, k.labels, "d_G")


# ---------------------------------------------------------------------------
# metric relations


@dataclass
class RelationReport:
    checks: list[CheckResult]
    triple_determinants: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self) -> list[str]:
        return [c.name for c in self.checks]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks],
                "triple_determinants": self.triple_determinants}


def _relation(name, lhs, rhs, labels, mask=None, slack=RELATION_SLACK, detail=""):
    """Check lhs <= rhs pairwise; the margin is min(rhs - lhs) over the mask."""
    off = ~np.eye(lhs.shape[0], dtype=bool)
    mask = off if mask is None else (mask & off)
    if not np.any(mask):
        return None
    m, pair = _worst(rhs - lhs, labels, mask)
    return CheckResult(name, m >= -slack, m, pair, detail)


def bounded_offdiag_pairs(g: np.ndarray) -> np.ndarray:
    """Pairs with max(|Gxy|, |Gyx|) <= min(Gxx, Gyy)."""
    a = np.abs(g)
    diag = np.diag(g)
    return np.maximum(a, a.T) <= np.minimum.outer(diag, diag) + CHECK_SLACK


def dominated_nonneg_pairs(g: np.ndarray) -> np.ndarray:
    """Pairs with 0 <= Gxy <= Gyy and 0 <= Gyx <= Gxx."""
    diag = np.diag(g)
    ok = (g >= 0) & (g <= diag[None, :] + CHECK_SLACK)
    return ok & ok.T


def triple_determinants(g: np.ndarray) -> dict:
    """Smallest 3x3 principal minor of the matrix sqrt(Gxy Gyx) over triples."""
    n = g.shape[0]
    if n < 3:
        return {"evaluated": False}
    s = np.sqrt(_pair_products(g))
    best, arg = math.inf, None
    for i in range(n):
        for j in range(i + 1, n):
            for l in range(j + 1, n):
                idx = [i, j, l]
                det = float(np.linalg.det(s[np.ix_(idx, idx)]))
                if det < best:
                    best, arg = det, idx
    return {"evaluated": True, "min_det": best, "argmin": arg, "all_nonneg": best >= -CHECK_SLACK}


DEFAULT_SHIFT_LADDER = (0.0, 0.25, 1.0, 4.0, 16.0)


def verify_metric_relations(k: Kernel, shift_ladder: Sequence[float] = DEFAULT_SHIFT_LADDER
                            ) -> RelationReport:
    """Evaluate every pairwise comparison between the kernel's distance functions.

    Comparisons between ``d2``, ``d3`` and ``dbar`` are restricted to the
    pairs where their hypotheses hold; a comparison with no eligible pair is
    left out of the report.
    """
    require_valid(k)
    g = k.entries
    labels = k.labels
    diag = np.diag(g)
    half = Kernel(k.index, g, 0.5)
    dth = metric(half, "dtheta").values
    dhat = metric(half, "dhat_theta").values
    db = metric(half, "dbar").values
    d = D_SCALE * db
    root_sum = np.sqrt(np.add.outer(diag, diag))

    out = [
        _relation("dhat_dtheta_lower", K_CONST * dth, dhat, labels),
        _relation("dhat_dtheta_upper", dhat, 2.0 * dth, labels),
        _relation("dhat_dbar_lower", K_CONST * root_sum * db, dhat, labels),
        _relation("dhat_dbar_upper", dhat, 2.0 * root_sum * db, labels),
        _relation("dbar_sqrt_dtheta", db, np.sqrt(dth), labels,
                  detail="dbar <= dtheta^(1/2); d itself carries an extra 4 sqrt(2/3)"),
    ]
    bnd = bounded_offdiag_pairs(g)
    if np.any(bnd & ~np.eye(k.n, dtype=bool)):
        a = np.abs(g)
        rad = np.add.outer(diag, diag) - (a + a.T)
        d2abs = np.sqrt(np.clip(np.where(bnd, rad, 0.0), 0.0, None))
        out.append(_relation("d2_dbar_lower", db / math.sqrt(2.0), d2abs, labels, bnd))
        out.append(_relation("d2_dbar_upper", d2abs, db, labels, bnd))
    if np.all(g >= 0):
        dom = dominated_nonneg_pairs(g)
        if np.any(dom & ~np.eye(k.n, dtype=bool)):
            rad = np.add.outer(diag, diag) - (g + g.T)
            d2 = np.sqrt(np.clip(np.where(dom, rad, 0.0), 0.0, None))
            r = np.sqrt(g)
            d3 = np.abs(r - r.T)
            out.append(_relation("split_d2", d2, db, labels, dom))
            out.append(_relation("split_d3", d3, db, labels, dom))
            out.append(_relation("split_sum", db, d2 + d3, labels, dom))
        mono = check_shift_monotonicity(k, shift_ladder)
        out.append(mono)
    return RelationReport([c for c in out if c is not None], triple_determinants(g))


def shift_kernel(k: Kernel, delta: float) -> Kernel:
    """Kernel with ``delta`` added to every entry."""
    if delta < 0:
        raise ValueError("shift must be nonnegative")
    if np.any(k.entries < 0):
        raise InvariantViolation("shift_kernel requires a kernel with nonnegative entries")
    return k.with_entries(k.entries + delta)


def check_shift_monotonicity(k: Kernel, ladder: Sequence[float]) -> CheckResult:
    """``dbar`` of the shifted kernel must be nonincreasing along ``ladder``.

    Compared on squared values, where rounding is proportional to the entry
    scale rather than amplified by the square root near zero.
    """
    ladder = sorted(float(x) for x in ladder)
    tables = []
    for dl in ladder:
        g = shift_kernel(k, dl).entries
        diag = np.diag(g)
        tables.append(np.add.outer(diag, diag) - 2.0 * np.sqrt(_pair_products(g)))
    margin, pair = math.inf, None
    for lo, hi in zip(tables, tables[1:]):
        m, p = _worst(lo - hi, k.labels, ~np.eye(k.n, dtype=bool))
        if m < margin:
            margin, pair = m, p
    if len(tables) < 2 or k.n < 2:
        margin = 0.0
    scale = max(1.0, float(np.abs(k.entries).max()) + (ladder[-1] if ladder else 0.0))
    return CheckResult("shift_monotone", margin >= -RELATION_SLACK * scale, margin, pair,
                       f"dbar^2 of G + delta nonincreasing over {ladder}")
