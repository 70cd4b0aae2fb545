"""Counter-based random streams.

Every random quantity in the package is addressed by ``(seed, stream, index)``.
The ``seed`` and ``stream`` select a Philox key; ``index`` selects a block of
the counter sequence. Block ``i`` of a stream can therefore be regenerated on
its own, and a batch ``[start, start + count)`` is bit-identical to drawing
each block separately, whatever the chunking or thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import special

# stream identifiers
PATHS = 0
BINOMIAL = 1
PROPOSAL = 2
ACCEPT = 3
PATH_SEEDS = 4
MULTISTART = 5
LIKELIHOOD_PATHS = 6

# 1 / 2**54, shifts k / 2**53 into the open interval (0, 1)
_HALF_ULP = 2.0 ** -54

CHUNK_ROWS = 4096


def stream_key(seed, stream):
    """Philox key for ``(seed, stream)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(stream),))
    return ss.generate_state(2, dtype=np.uint64)


def _uniform_rows(key, start, count, width):
    pos = start * width
    bg = np.random.Philox(key=key)
    bg.advance(pos // 4)
    gen = np.random.Generator(bg)
    if pos % 4:
        gen.random(pos % 4)
    u = gen.random(count * width)
    u += _HALF_ULP
    return u.reshape(count, width)


def worker_count():
    """Worker cap from ``MERTON_THREADS``; defaults to the available cores."""
    raw = os.environ.get("MERTON_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def uniforms(seed, stream, start, count, width):
    """Uniform(0, 1) array of shape ``(count, width)`` for blocks ``start..start+count-1``.

    Values are never exactly 0 or 1.
    """
    if count <= 0:
        return np.empty((0, width))
    key = stream_key(seed, stream)
    if count <= CHUNK_ROWS:
        return _uniform_rows(key, start, count, width)
    starts = list(range(start, start + count, CHUNK_ROWS))
    sizes = [min(CHUNK_ROWS, start + count - s) for s in starts]
    workers = min(worker_count(), len(starts))
    if workers == 1:
        parts = [_uniform_rows(key, s, c, width) for s, c in zip(starts, sizes)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda sc: _uniform_rows(key, sc[0], sc[1], width), zip(starts, sizes)))
    return np.concatenate(parts, axis=0)


def normals(seed, stream, start, count, width):
    """Standard normal array by inversion of :func:`uniforms`."""
    return special.ndtri(uniforms(seed, stream, start, count, width))


def derive_seed(seed, stream, index):
    """A child 63-bit seed, reproducible from ``(seed, stream, index)``."""
    u = _uniform_rows(stream_key(seed, stream), int(index), 1, 1)[0, 0]
    return int(u * 2.0**63)
