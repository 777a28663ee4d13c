"""Key/value stores for autoregressive decoding.

All caches store *unrotated* keys; positional rotation happens at attention
time, which is what lets the sink cache re-index positions after eviction.
Every cache exposes ``keys()``, ``values()`` and ``positions()`` as a logical,
gathered view plus ``slot_count`` for memory telemetry.
"""

import heapq
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, OutOfBlocksError, ShapeError
from .linalg import as_vector


def _check_kv(k, v, dim):
    k = as_vector(k, "k")
    v = as_vector(v, "v")
    if k.shape[0] != dim or v.shape[0] != dim:
        raise ShapeError(f"expected key/value width {dim}, got {k.shape[0]} and {v.shape[0]}")
    return k, v


class ContiguousCache:
    """Append-only baseline; one slot per token ever seen."""

    def __init__(self, dim, capacity=64):
        self.dim = dim
        self._k = np.empty((max(capacity, 1), dim))
        self._v = np.empty((max(capacity, 1), dim))
        self._len = 0

    def __len__(self):
        return self._len

    @property
    def slot_count(self):
        return self._len

    def append(self, k, v):
        k, v = _check_kv(k, v, self.dim)
        if self._len == self._k.shape[0]:
            self._k = np.concatenate([self._k, np.empty_like(self._k)])
            self._v = np.concatenate([self._v, np.empty_like(self._v)])
        self._k[self._len] = k
        self._v[self._len] = v
        self._len += 1
        return self

    def extend(self, k_rows, v_rows):
        for k, v in zip(k_rows, v_rows):
            self.append(k, v)
        return self

    def keys(self):
        return self._k[: self._len]

    def values(self):
        return self._v[: self._len]

    def positions(self):
        return np.arange(self._len)


class SinkCache:
    """Attention sinks plus a rolling window of the most recent tokens.

    The first ``n_sink`` tokens are kept forever; later tokens enter a ring of
    ``window`` slots that evicts its oldest entry when full.
    """

    def __init__(self, dim, n_sink=4, window=512):
        if n_sink < 0 or window < 0 or n_sink + window == 0:
            raise ConfigError(f"sink cache needs n_sink + window > 0, got {n_sink} + {window}")
        self.dim = dim
        self.n_sink = n_sink
        self.window = window
        self.sink_keys = np.empty((n_sink, dim))
        self.sink_values = np.empty((n_sink, dim))
        self.roll_keys = np.empty((window, dim))
        self.roll_values = np.empty((window, dim))
        self._sink_pos = []
        self._roll_pos = np.full(window, -1, dtype=np.int64)
        self._head = 0  # ring slot holding the oldest rolled token
        self._n_roll = 0
        self.tokens_seen = 0

    @property
    def capacity(self):
        return self.n_sink + self.window

    def __len__(self):
        return len(self._sink_pos) + self._n_roll

    @property
    def slot_count(self):
        return len(self)

    def append(self, k, v):
        """Store a token; return the original index of the evicted token, if any."""
        k, v = _check_kv(k, v, self.dim)
        idx = self.tokens_seen
        self.tokens_seen += 1
        if len(self._sink_pos) < self.n_sink:
            slot = len(self._sink_pos)
            self.sink_keys[slot] = k
            self.sink_values[slot] = v
            self._sink_pos.append(idx)
            return None
        if self.window == 0:
            return idx
        if self._n_roll < self.window:
            slot = (self._head + self._n_roll) % self.window
            self._n_roll += 1
            evicted = None
        else:
            slot = self._head
            evicted = int(self._roll_pos[slot])
            self._head = (self._head + 1) % self.window
        self.roll_keys[slot] = k
        self.roll_values[slot] = v
        self._roll_pos[slot] = idx
        return evicted

    def _ring_order(self):
        return (self._head + np.arange(self._n_roll)) % max(self.window, 1)

    def keys(self):
        order = self._ring_order()
        return np.concatenate([self.sink_keys[: len(self._sink_pos)], self.roll_keys[order]])

    def values(self):
        order = self._ring_order()
        return np.concatenate([self.sink_values[: len(self._sink_pos)], self.roll_values[order]])

    @property
    def absolute_positions(self):
        """Original token indices in slot order, for auditing only."""
        return np.concatenate(
            [np.array(self._sink_pos, dtype=np.int64), self._roll_pos[self._ring_order()]]
        )

    def positions(self):
        # Rotary positions follow slot order so they stay bounded after eviction.
        return np.arange(len(self))


@dataclass(frozen=True)
class FragmentationStats:
    blocks_used: int
    slots_allocated: int
    slots_filled: int
    internal_fragmentation: int


class PagedCache:
    """Block-table KV store backed by a growable pool of fixed-size blocks.

    Several sequences may share the pool; each owns a block table, and a block is
    never referenced by two tables. Freed blocks return to a min-heap so the
    lowest free id is always reused before the pool grows. ``max_blocks`` caps
    the pool size (``None`` means unbounded).
    """

    def __init__(self, dim, block_size=16, max_blocks=None):
        if block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {block_size}")
        if max_blocks is not None and max_blocks < 0:
            raise ConfigError("max_blocks must be non-negative")
        self.dim = dim
        self.block_size = block_size
        self.max_blocks = max_blocks
        self.key_blocks = []
        self.value_blocks = []
        self.free_list = []
        self.block_tables = {}
        self.filled = {}

    @property
    def pool_size(self):
        return len(self.key_blocks)

    def _table(self, seq):
        return self.block_tables.setdefault(seq, [])

    def alloc(self, seq=0):
        """Attach one physical block to ``seq``'s table and return its id."""
        if self.free_list:
            block = heapq.heappop(self.free_list)
        elif self.max_blocks is None or self.pool_size < self.max_blocks:
            block = self.pool_size
            self.key_blocks.append(np.zeros((self.block_size, self.dim)))
            self.value_blocks.append(np.zeros((self.block_size, self.dim)))
        else:
            raise OutOfBlocksError(f"all {self.pool_size} blocks in use and the pool is capped")
        self._table(seq).append(block)
        self.filled.setdefault(seq, 0)
        return block

    def free(self, seq=0):
        """Release every block held by ``seq``."""
        for block in self.block_tables.pop(seq, []):
            heapq.heappush(self.free_list, block)
        self.filled.pop(seq, None)

    def append(self, k, v, seq=0):
        k, v = _check_kv(k, v, self.dim)
        table = self._table(seq)
        n = self.filled.get(seq, 0)
        if n == len(table) * self.block_size:
            self.alloc(seq)
        block = table[n // self.block_size]
        self.key_blocks[block][n % self.block_size] = k
        self.value_blocks[block][n % self.block_size] = v
        self.filled[seq] = n + 1
        return self

    def __len__(self):
        return self.filled.get(0, 0)

    @property
    def slot_count(self):
        return sum(self.filled.values())

    def read(self, t, seq=0):
        """Return the ``(key, value)`` stored for logical token ``t``."""
        if not 0 <= t < self.filled.get(seq, 0):
            raise IndexError(f"token {t} not stored for sequence {seq}")
        block = self.block_tables[seq][t // self.block_size]
        return self.key_blocks[block][t % self.block_size], self.value_blocks[block][t % self.block_size]

    def blocks(self, seq=0):
        """Yield ``(start, keys, values)`` per block in table order, trimmed to filled slots."""
        n = self.filled.get(seq, 0)
        for j, block in enumerate(self.block_tables.get(seq, [])):
            start = j * self.block_size
            used = min(self.block_size, n - start)
            if used <= 0:
                break
            yield start, self.key_blocks[block][:used], self.value_blocks[block][:used]

    def keys(self, seq=0):
        parts = [k for _, k, _ in self.blocks(seq)]
        return np.concatenate(parts) if parts else np.empty((0, self.dim))

    def values(self, seq=0):
        parts = [v for _, _, v in self.blocks(seq)]
        return np.concatenate(parts) if parts else np.empty((0, self.dim))

    def positions(self, seq=0):
        return np.arange(self.filled.get(seq, 0))

    def fragmentation_stats(self):
        used = sum(len(t) for t in self.block_tables.values())
        allocated = used * self.block_size
        filled = sum(self.filled.values())
        return FragmentationStats(used, allocated, filled, allocated - filled)
