"""Reproducible random streams for parallel Monte Carlo.

Every stream is a Philox generator keyed by (seed, *key). Work is split into
fixed-size chunks, chunk j drawing from the stream (seed, *key, j), so results
never depend on how many threads process the chunks.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from app.config.config import get_settings
from app.exceptions import InputError

logger = logging.getLogger(__name__)

T = TypeVar("T")


def substream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator derived deterministically from (seed, key...)."""
    if seed < 0:
        raise InputError(f"seed must be nonnegative, got {seed}")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def chunk_sizes(total: int, chunk_size: Optional[int] = None) -> List[int]:
    if chunk_size is None:
        chunk_size = get_settings().CHUNK_SIZE
    if chunk_size < 1:
        raise InputError(f"chunk size must be positive, got {chunk_size}")
    full, rest = divmod(total, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def run_parallel(fn: Callable[[int], T], count: int, threads: Optional[int] = None) -> List[T]:
    """Evaluate fn(0..count-1) on a thread pool; results come back in index order."""
    workers = min(get_settings().worker_count(threads), max(count, 1))
    if workers == 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def map_chunks(
        fn: Callable[[np.random.Generator, int], T],
        draws: int,
        seed: int,
        key: Sequence[int] = (),
        threads: Optional[int] = None,
        chunk_size: Optional[int] = None,
) -> List[T]:
    """Apply fn(stream, size) to every chunk of `draws`, in chunk order."""
    sizes = chunk_sizes(draws, chunk_size)
    logger.debug(f"Sampling {draws} draws in {len(sizes)} chunks (seed={seed}, key={tuple(key)})")
    return run_parallel(lambda j: fn(substream(seed, *key, j), sizes[j]), len(sizes), threads)
