"""Seed-stream splitting.

Every random draw in the package comes from a stream identified by
``(root_seed, purpose, block)``::

    np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=(purpose, block)))

``purpose`` is a small integer from :data:`PURPOSE`; ``block`` indexes a
fixed-size group of :data:`BLOCK` consecutive items (trajectories, chains,
samples).  Item ``i`` always lives in block ``i // BLOCK`` at row
``i % BLOCK``, and a block always draws its full ``BLOCK`` rows, so
generating the first ``m`` items gives the same values whether ``m`` or
``2m`` items are requested, and whether blocks are generated serially or
by several workers.  Changing these constants changes every dataset; they
are part of the reproducibility contract.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK = 256

PURPOSE = {
    "target": 1,
    "noise": 2,
    "sample": 3,
    "init": 4,
    "batch": 5,
    "mc": 6,
    "misc": 7,
}


def stream(seed, purpose, block=0):
    """Generator for one ``(seed, purpose, block)`` stream."""
    key = PURPOSE[purpose] if isinstance(purpose, str) else int(purpose)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key, int(block))))


def n_blocks(n):
    return -(-int(n) // BLOCK)


def worker_count(requested=None):
    """Worker cap: explicit request, else ``SCORELAB_THREADS``, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("SCORELAB_THREADS")
    return max(1, int(env)) if env else 1


def blockwise(n, seed, purpose, draw, workers=None):
    """Concatenate ``draw(gen, BLOCK)`` over the blocks covering ``n`` rows.

    ``draw`` must return an array whose leading axis has ``BLOCK`` rows.
    The result is truncated to ``n`` rows.  Output is independent of the
    worker count because each block owns its own stream.
    """
    blocks = range(n_blocks(n))

    def one(b):
        return draw(stream(seed, purpose, b), BLOCK)

    nw = worker_count(workers)
    if nw == 1 or len(blocks) <= 1:
        parts = [one(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            parts = list(pool.map(one, blocks))
    return np.concatenate(parts, axis=0)[:n]
