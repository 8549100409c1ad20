"""Monte-Carlo estimates with no finite closed form.

Squared Gaussian fields for symmetric kernels, empirical psi_2 (Orlicz)
norms, the truncated-increment bound for squared Gaussian pairs, the
symmetric surrogate for a nonsymmetric 2x2 kernel, and an empirical
modulus-of-continuity study.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import lapack
from scipy.special import logsumexp

from .checks import StatCheck, VerificationReport, mean_check
from .entropy import EntropyError, ProbabilityWeights, entropy_integral_many
from .kernel import IndexSet, Kernel, KernelError, metric, require_valid
from .moments import covariance_structure, laplace_transform
from .rng import concat_blocks, derive_stream, map_blocks

PSD_TOL = 1e-10
BRACKET = (1e-6, 1e6)
N_BOOTSTRAP = 64
MODULUS_CONSTANT = 30.0


class HeavyTailError(ValueError):
    pass


def gaussian_factor(g: np.ndarray) -> np.ndarray:
    """``L`` with ``L @ L.T == g`` by pivoted Cholesky, tolerating a singular ``g``."""
    g = np.asarray(g, dtype=float)
    if not np.allclose(g, g.T, rtol=0, atol=1e-12 * max(1.0, np.abs(g).max())):
        raise KernelError("Gaussian-square sampling needs a symmetric kernel")
    lam = np.linalg.eigvalsh(g)
    if lam.min() < -PSD_TOL * max(1.0, lam.max()):
        raise KernelError(f"kernel is indefinite (minimum eigenvalue {lam.min():.3e})")
    n = g.shape[0]
    c, piv, rank, info = lapack.dpstrf(g, lower=1, tol=-1.0)
    if info < 0:
        raise KernelError("pivoted Cholesky failed")
    low = np.tril(c)
    low[:, rank:] = 0.0
    out = np.zeros((n, n))
    out[piv - 1] = low
    return out


def _orders(beta: float) -> int:
    k = 2.0 * beta
    if abs(k - round(k)) > 1e-12 or round(k) < 1:
        raise ValueError("Gaussian-square sampling needs beta = k/2 for a positive integer k")
    return int(round(k))


def sample_gaussian_square(k: Kernel, seed: int, n: int, beta: float | None = None,
                           workers: int | None = None) -> np.ndarray:
    """``n`` fields ``theta = sum_{j<2 beta} eta_j**2`` with eta_j i.i.d. N(0, G); shape ``(n, points)``."""
    beta = k.beta if beta is None else float(beta)
    reps = _orders(beta)
    low = gaussian_factor(k.entries)

    def block(rng, size):
        z = rng.standard_normal((reps, size, k.n))
        eta = z @ low.T
        return (eta * eta).sum(axis=0)

    return concat_blocks(map_blocks(block, n, seed, workers))


def verify_gaussian_square(k: Kernel, seed: int, n: int, weights: Sequence | None = None,
                           beta: float | None = None) -> VerificationReport:
    """Empirical means, covariances and Laplace transforms against their exact values."""
    beta = k.beta if beta is None else float(beta)
    theta = sample_gaussian_square(k, seed, n, beta)
    mean, cov = covariance_structure(k, beta)
    labels = k.labels
    checks = []
    for i in range(k.n):
        checks.append(mean_check(f"E[theta({labels[i]})]", theta[:, i], mean[i]))
    centred = theta - mean
    for i in range(k.n):
        for j in range(i, k.n):
            checks.append(mean_check(f"cov({labels[i]},{labels[j]})",
                                     centred[:, i] * centred[:, j], cov[i, j]))
    if weights is None:
        wrng = derive_stream(seed, 2**40)
        weights = [wrng.uniform(0.1, 2.0, k.n) for _ in range(3)]
    for w in weights:
        w = np.asarray(w, dtype=float)
        checks.append(mean_check(f"laplace{tuple(round(float(x), 6) for x in w)}",
                                 np.exp(-0.5 * theta @ w), laplace_transform(k, w, beta)))
    return VerificationReport(checks, {"beta": beta, "n": n, "seed": seed})


@dataclass(frozen=True)
class OrliczEstimate:
    norm_estimate: float
    n_samples: int
    confidence_band: tuple

    @property
    def relative_halfwidth(self) -> float:
        lo, hi = self.confidence_band
        return (hi - lo) / (2.0 * self.norm_estimate) if self.norm_estimate > 0 else 0.0

    def to_dict(self) -> dict:
        return {"norm_estimate": self.norm_estimate, "n_samples": self.n_samples,
                "confidence_band": list(self.confidence_band)}


def _log_mean_exp(sq: np.ndarray, c: float) -> float:
    return float(logsumexp(sq / (c * c)) - math.log(sq.size))


def psi2_norm_of_samples(xi: np.ndarray, bisect_tol: float = 1e-8, seed: int = 0,
                         n_boot: int = N_BOOTSTRAP) -> OrliczEstimate:
    """Root of ``c -> mean(exp(xi**2 / c**2)) - 2`` by bisection in log c.

    The band propagates 64 bootstrap resamples of the mean at the root
    through the local slope of the map.
    """
    xi = np.asarray(xi, dtype=float).ravel()
    n = xi.size
    sq = xi * xi
    scale = math.sqrt(float(sq.mean()))
    if scale == 0.0:
        return OrliczEstimate(0.0, n, (0.0, 0.0))
    log2 = math.log(2.0)
    lo, hi = BRACKET[0] * scale, BRACKET[1] * scale
    if not (_log_mean_exp(sq, lo) > log2 > _log_mean_exp(sq, hi)):
        raise HeavyTailError("heavy tail beyond ψ₂ at this n")
    while hi - lo > bisect_tol * hi:
        mid = math.sqrt(lo * hi)
        if _log_mean_exp(sq, mid) > log2:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    e = np.exp(sq / (c * c) - sq.max() / (c * c))
    shift = sq.max() / (c * c)
    # d/dc mean(exp(xi^2/c^2)) = -2/c^3 mean(xi^2 exp(xi^2/c^2))
    slope = -2.0 / c**3 * float(np.mean(sq * e)) * math.exp(shift)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(2**41,)))
    boot = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, n)
        boot[b] = float(np.mean(e[idx])) * math.exp(shift)
    deltas = (boot - 2.0) / -slope
    lower = c + min(0.0, float(np.quantile(deltas, 0.025)))
    upper = c + max(0.0, float(np.quantile(deltas, 0.975)))
    return OrliczEstimate(c, n, (max(lower, 0.0), upper))


def orlicz_psi2_norm(sampler: Callable[[np.random.Generator, int], np.ndarray], seed: int,
                     n: int, bisect_tol: float = 1e-8) -> OrliczEstimate:
    """Empirical psi_2 norm of ``n`` draws of ``sampler(rng, size)``."""
    if n < 10_000:
        raise ValueError("need at least 10^4 samples")
    xi = concat_blocks(map_blocks(sampler, n, seed))
    return psi2_norm_of_samples(xi, bisect_tol, seed)


@dataclass
class Psi2BoundReport:
    pair: tuple
    lam: float
    estimate: OrliczEstimate
    bound: float

    @property
    def passed(self) -> bool:
        est = self.estimate
        return bool(est.norm_estimate <= self.bound * (1.0 + 5.0 * est.relative_halfwidth))

    def to_dict(self) -> dict:
        return {"pair": list(self.pair), "lambda": self.lam, "bound": self.bound,
                "estimate": self.estimate.to_dict(), "pass": self.passed}


def verify_psi2_bound(k: Kernel, x, y, lam: float, seed: int, n: int) -> Psi2BoundReport:
    """psi_2 norm of ``(theta_x ^ lam - theta_y ^ lam) / sqrt(lam)`` against ``d(x, y)``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    i, j = (p if isinstance(p, (int, np.integer)) else k.index.position(p) for p in (x, y))
    theta = sample_gaussian_square(k.restrict([i, j]) if i != j else k.restrict([i]), seed, n, 0.5)
    if i == j:
        xi = np.zeros(n)
    else:
        t = np.minimum(theta, lam)
        xi = (t[:, 0] - t[:, 1]) / math.sqrt(lam)
    if n < 10_000:
        raise ValueError("need at least 10^4 samples")
    est = psi2_norm_of_samples(xi, seed=seed)
    bound = float(metric(k, "d").values[i, j])
    return Psi2BoundReport((k.labels[i], k.labels[j]), float(lam), est, bound)


def surrogate_kernel(g: np.ndarray) -> np.ndarray:
    """Symmetric 2x2 kernel with the same diagonal and the same off-diagonal product."""
    g = np.asarray(g, dtype=float)
    if g.shape != (2, 2):
        raise ValueError("surrogate is defined for 2x2 kernels")
    s = math.sqrt(max(g[0, 1] * g[1, 0], 0.0))
    return np.array([[g[0, 0], s], [s, g[1, 1]]])


def verify_bivariate_surrogate(k: Kernel, seed: int, n: int, weights=None) -> VerificationReport:
    """Squared Gaussian pairs from the surrogate against the original kernel's Laplace transform."""
    require_valid(k)
    sur = Kernel(k.index, surrogate_kernel(k.entries), 0.5)
    theta = sample_gaussian_square(sur, seed, n, 0.5)
    weights = [(1.0, 1.0), (0.5, 2.0), (3.0, 0.25)] if weights is None else weights
    checks = []
    for w in weights:
        w = np.asarray(w, dtype=float)
        checks.append(mean_check(f"laplace{tuple(float(v) for v in w)}",
                                 np.exp(-0.5 * theta @ w), laplace_transform(k, w, 0.5)))
    return VerificationReport(checks, {"surrogate": sur.entries.tolist()})


# modulus of continuity


def brownian_kernel(n_points: int, shift: float = 1.0) -> Kernel:
    """``min(s, t) + shift`` on the grid ``s = i / n``, ``i = 1..n``."""
    x = np.arange(1, n_points + 1) / n_points
    labels = tuple(str(i) for i in range(1, n_points + 1))
    return Kernel(IndexSet(labels, coordinates=tuple(x.tolist())),
                  np.minimum(x[:, None], x[None, :]) + shift, 0.5)


@dataclass
class ModulusReport:
    deltas: np.ndarray
    ratios: np.ndarray  # (seeds, deltas)
    bounds: np.ndarray  # per seed, 30 sqrt(max theta)
    meta: dict = field(default_factory=dict)

    @property
    def finest_pass(self) -> np.ndarray:
        return self.ratios[:, 0] <= self.bounds

    @property
    def fraction_exceeding(self) -> float:
        return float(1.0 - self.finest_pass.mean())

    def summary(self) -> dict:
        fin = self.ratios[:, 0]
        return {"deltas": self.deltas.tolist(),
                "finest_ratio_quantiles": {q: float(np.quantile(fin, q))
                                           for q in (0.0, 0.25, 0.5, 0.75, 0.99, 1.0)},
                "median_ratio_per_delta": np.median(self.ratios, axis=0).tolist(),
                "bound_median": float(np.median(self.bounds)),
                "fraction_exceeding": self.fraction_exceeding, **self.meta}


def modulus_ratios(theta: np.ndarray, dist: np.ndarray, jhalf: np.ndarray,
                   deltas: np.ndarray) -> np.ndarray:
    """Per field, max over pairs with ``dist <= delta`` of ``|theta_s - theta_t| / J(dist/2)``."""
    iu, ju = np.triu_indices(dist.shape[0], 1)
    dpair = dist[iu, ju]
    jp = jhalf[iu, ju]
    keep = jp > 0
    dpair, jp, iu, ju = dpair[keep], jp[keep], iu[keep], ju[keep]
    order = np.argsort(dpair, kind="stable")
    dpair, jp, iu, ju = dpair[order], jp[order], iu[order], ju[order]
    inc = np.abs(theta[:, iu] - theta[:, ju]) / jp
    running = np.maximum.accumulate(inc, axis=1)
    cut = np.searchsorted(dpair, deltas, side="right")
    out = np.zeros((theta.shape[0], deltas.size))
    for col, c in enumerate(cut):
        if c > 0:
            out[:, col] = running[:, c - 1]
    return out


def modulus_experiment(k: Kernel, mu: ProbabilityWeights | None, seed: int, n_seeds: int,
                       deltas=None) -> ModulusReport:
    """Empirical increment ratios of squared Gaussian fields against the J bound.

    Each seed draws one field. Pairs with ``J(d/2) = 0`` are excluded. The
    finest delta is compared with ``30 sqrt(max theta)``.
    """
    mu = ProbabilityWeights.uniform(k.index) if mu is None else mu
    if np.any(mu.weights <= 0):
        raise EntropyError("μ must charge every point")
    table = metric(k, "d")
    dist = table.values
    jhalf = entropy_integral_many(table, mu, dist / 2.0)
    np.fill_diagonal(jhalf, 0.0)
    if not np.any(jhalf > 0):
        raise EntropyError("degenerate entropy integral (all zero)")
    if deltas is None:
        positive = dist[dist > 0]
        deltas = np.geomspace(2.0 * positive.min(), table.diameter, 8)
    deltas = np.asarray(deltas, dtype=float)
    theta = sample_gaussian_square(k, seed, n_seeds, 0.5)
    ratios = modulus_ratios(theta, dist, jhalf, deltas)
    bounds = MODULUS_CONSTANT * np.sqrt(theta.max(axis=1))
    return ModulusReport(deltas, ratios, bounds, {"n_seeds": n_seeds, "seed": seed,
                                                  "points": k.n})


__all__ = [
    "HeavyTailError", "OrliczEstimate", "ModulusReport", "Psi2BoundReport", "StatCheck",
    "gaussian_factor", "sample_gaussian_square", "verify_gaussian_square",
    "psi2_norm_of_samples", "orlicz_psi2_norm", "verify_psi2_bound", "surrogate_kernel",
    "verify_bivariate_surrogate", "brownian_kernel", "modulus_ratios", "modulus_experiment",
]
