"""Deterministic random streams.

Every stochastic routine in the package draws from generators built by
:func:`derive_stream`. A stream is addressed by ``(master_seed, index)`` and
the mapping goes through :class:`numpy.random.SeedSequence` with the index as
the spawn key, which hashes the pair into generator state the same way on
every platform. Work is split into fixed-size blocks, one stream per block,
so results never depend on how many workers process the blocks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

#: Number of samples (paths, realizations, seeds) that share one stream.
BLOCK_SIZE = 4096

MAX_SEED = 2**64 - 1


def derive_stream(master_seed: int, stream_index: int) -> np.random.Generator:
    """Return the generator for stream ``stream_index`` under ``master_seed``.

    The pair is injective: distinct ``(seed, index)`` pairs give distinct
    SeedSequence states, and the same pair always reproduces the same draws.
    """
    if not 0 <= int(master_seed) <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {master_seed}")
    if int(stream_index) < 0:
        raise ValueError(f"stream index must be nonnegative, got {stream_index}")
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(stream_index),))
    return np.random.Generator(np.random.PCG64(seq))


def sub_seed(master_seed: int, experiment: int) -> int:
    """Seed for the ``experiment``-th independent sub-run of a master seed.

    Sub-seeds come from a spawn-key namespace above 2**32 so they never
    coincide with the block streams of the master seed itself.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(2**32 + int(experiment),))
    lo, hi = (int(v) for v in seq.generate_state(2, dtype=np.uint32))
    return lo | (hi << 32)


def worker_count(default: int = 1) -> int:
    """Worker count from ``PERMASOUP_THREADS``, falling back to ``default``."""
    raw = os.environ.get("PERMASOUP_THREADS")
    if raw is None:
        return max(1, default)
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"PERMASOUP_THREADS must be an integer, got {raw!r}") from exc
    return max(1, value)


def block_sizes(n: int, block_size: int = BLOCK_SIZE) -> list[int]:
    """Split ``n`` items into consecutive blocks of at most ``block_size``."""
    if n < 1:
        raise ValueError("need at least one sample")
    full, rest = divmod(n, block_size)
    return [block_size] * full + ([rest] if rest else [])


def map_blocks(
    func: Callable[[np.random.Generator, int], T],
    n: int,
    seed: int,
    workers: int | None = None,
    block_size: int = BLOCK_SIZE,
) -> list[T]:
    """Apply ``func(rng, size)`` to every block; results come back in block order."""
    sizes = block_sizes(n, block_size)
    jobs = [(derive_stream(seed, i), size) for i, size in enumerate(sizes)]
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(jobs) == 1:
        return [func(rng, size) for rng, size in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: func(*job), jobs))


def concat_blocks(parts: Sequence[np.ndarray] | Iterable[np.ndarray]) -> np.ndarray:
    parts = list(parts)
    return np.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]
