"""Reproducible random streams.

Every random quantity in the package is drawn from a generator obtained by
``derive_stream(master_seed, stream_id)``.  The pair is scrambled with the
SplitMix64 finalizer into a 128-bit Philox key::

    key0 = splitmix64(master_seed)
    key1 = splitmix64(splitmix64(stream_id) ^ master_seed)

where ``splitmix64(x)`` is one step of Vigna's SplitMix64 generator started
from state ``x`` (add the golden-gamma constant, then the 30/27/31 xor-shift
multiply finalizer).  Both maps are bijections of 64-bit words, so distinct
stream ids under one master seed always give distinct keys.  Philox4x64 is
counter based, so the output is a pure function of the key.

Uniforms are ``Generator.random()`` draws, i.e. ``(next_uint64 >> 11) * 2**-53``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (``splitmix64(0) == 0xE220A8397B1DCDAF``)."""
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(master_seed: int, stream_id: int) -> tuple[int, int]:
    seed = int(master_seed) & MASK64
    sid = int(stream_id) & MASK64
    return splitmix64(seed), splitmix64(splitmix64(sid) ^ seed)


def derive_stream(master_seed: int, stream_id: int) -> np.random.Generator:
    """Return the generator for ``(master_seed, stream_id)``."""
    key = np.array(stream_key(master_seed, stream_id), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def replicate(
    fn: Callable[[np.random.Generator, int], object],
    replicas: int,
    master_seed: int,
    stream_base: int,
    block_size: int = 10_000,
    threads: int = 1,
) -> list:
    """Run ``fn(rng, size)`` over fixed replica blocks.

    Block ``b`` always gets stream ``stream_base + b`` and results come back
    in block order, so the output does not depend on ``threads``.
    """
    if replicas <= 0:
        return []
    sizes = [block_size] * (replicas // block_size)
    if replicas % block_size:
        sizes.append(replicas % block_size)

    def run(b: int):
        return fn(derive_stream(master_seed, stream_base + b), sizes[b])

    if threads <= 1 or len(sizes) == 1:
        return [run(b) for b in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, range(len(sizes))))
