"""Causal attention backends sharing one contract.

``naive`` and ``flash`` take full query/key/value matrices; ``paged`` and
``streaming`` evaluate one query against a cache. All of them apply the
``1/sqrt(d)`` scale and build scores through :mod:`ctxlab.positional`.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DegenerateRowError, EmptyContextError, ShapeError, UnsupportedCombinationError
from .linalg import _row_sum, as_matrix, as_vector, matmul, softmax_rows
from .positional import ReRopeConfig, RopeConfig, rerope_scores, rotate

BACKENDS = ("naive", "flash", "paged", "streaming")
PE_MODES = ("none", "sinusoidal", "rope", "rerope")


@dataclass(frozen=True)
class AttentionSpec:
    """Backend choice plus its knobs.

    ``pe_mode="sinusoidal"`` behaves like ``"none"`` here; the absolute encoding
    is added to embeddings by the model. ReRoPE needs the whole score matrix and
    is therefore only accepted by the naive backend.
    """

    backend: str = "naive"
    head_dim: int = 16
    tile_size: int = 16
    block_size: int = 16
    pe_mode: str = "rope"
    rope: RopeConfig = None
    rerope: ReRopeConfig = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}; choose from {BACKENDS}")
        if self.pe_mode not in PE_MODES:
            raise ConfigError(f"unknown pe_mode {self.pe_mode!r}; choose from {PE_MODES}")
        if self.head_dim < 1:
            raise ConfigError("head_dim must be >= 1")
        if self.tile_size < 1:
            raise ConfigError(f"tile_size must be >= 1, got {self.tile_size}")
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        if self.pe_mode in ("rope", "rerope") and self.rope is None:
            rope = self.rerope.rope if self.rerope is not None else RopeConfig(self.head_dim)
            object.__setattr__(self, "rope", rope)
        if self.rope is not None and self.rope.head_dim != self.head_dim:
            raise ConfigError("rope head_dim does not match attention head_dim")
        if self.pe_mode == "rerope":
            if self.rerope is None:
                raise ConfigError("pe_mode='rerope' needs a ReRopeConfig")
            if self.backend != "naive":
                raise UnsupportedCombinationError(
                    f"rerope requires materialised pairwise scores; backend {self.backend!r} is unsupported"
                )

    @property
    def scale(self):
        return 1.0 / math.sqrt(self.head_dim)

    @property
    def rotary(self):
        return self.pe_mode == "rope"


def _check_qkv(q_rows, k_rows, v_rows, spec):
    q_rows = as_matrix(q_rows, "q_rows")
    k_rows = as_matrix(k_rows, "k_rows")
    v_rows = as_matrix(v_rows, "v_rows")
    if k_rows.shape[0] != v_rows.shape[0]:
        raise ShapeError(f"{k_rows.shape[0]} keys but {v_rows.shape[0]} values")
    if q_rows.shape[1] != spec.head_dim or k_rows.shape[1] != spec.head_dim:
        raise ShapeError(f"query/key width must equal head_dim {spec.head_dim}")
    return q_rows, k_rows, v_rows


def _default_positions(q_positions, k_positions, nq, nk):
    # Queries are taken to be the last nq tokens of the key sequence.
    kp = np.arange(nk) if k_positions is None else np.asarray(k_positions).reshape(-1)
    qp = np.arange(nk - nq, nk) if q_positions is None else np.asarray(q_positions).reshape(-1)
    if kp.shape[0] != nk or qp.shape[0] != nq:
        raise ShapeError("position arrays do not match row counts")
    return qp, kp


def _scores(q_rows, k_rows, qp, kp, spec):
    if spec.pe_mode == "rerope":
        return rerope_scores(q_rows, k_rows, spec.rerope, qp, kp)
    if spec.rotary:
        return matmul(rotate(q_rows, qp, spec.rope), rotate(k_rows, kp, spec.rope).T)
    return matmul(q_rows, k_rows.T)


def naive_attention(q_rows, k_rows, v_rows, spec, q_positions=None, k_positions=None):
    """Reference: full score matrix, causal softmax, weighted sum of values."""
    q_rows, k_rows, v_rows = _check_qkv(q_rows, k_rows, v_rows, spec)
    qp, kp = _default_positions(q_positions, k_positions, q_rows.shape[0], k_rows.shape[0])
    s = _scores(q_rows, k_rows, qp, kp, spec) * spec.scale
    p = softmax_rows(s, kp[None, :] <= qp[:, None])
    return matmul(p, v_rows)


def flash_attention(q_rows, k_rows, v_rows, spec, q_positions=None, k_positions=None):
    """Tiled attention with an online softmax.

    Each query tile sweeps the key tiles keeping a running row maximum ``m``,
    denominator ``l`` and unnormalised accumulator; whenever ``m`` grows the old
    state is rescaled by ``exp(m_old - m_new)``. Only ``tile x tile`` score
    blocks ever exist.
    """
    q_rows, k_rows, v_rows = _check_qkv(q_rows, k_rows, v_rows, spec)
    if spec.pe_mode == "rerope":
        raise UnsupportedCombinationError("flash attention cannot merge windowed rerope scores")
    nq, nk = q_rows.shape[0], k_rows.shape[0]
    qp, kp = _default_positions(q_positions, k_positions, nq, nk)
    if spec.rotary:
        q_rows, k_rows = rotate(q_rows, qp, spec.rope), rotate(k_rows, kp, spec.rope)
    tile = spec.tile_size
    out = np.empty((nq, v_rows.shape[1]))
    for i0 in range(0, nq, tile):
        qt, qpt = q_rows[i0:i0 + tile], qp[i0:i0 + tile]
        m = np.full(qt.shape[0], -np.inf)
        l = np.zeros(qt.shape[0])
        acc = np.zeros((qt.shape[0], v_rows.shape[1]))
        last_q = qpt.max()
        for j0 in range(0, nk, tile):
            kpt = kp[j0:j0 + tile]
            if kpt.min() > last_q:
                continue  # entirely in the causal future
            s = matmul(qt, k_rows[j0:j0 + tile].T) * spec.scale
            if kpt.max() <= qpt.min():
                # Tile fully visible to every query row.
                m_new = np.maximum(m, s.max(axis=1))
                p = np.exp(s - m_new[:, None])
                alpha = np.exp(m - m_new)
            else:
                mask = kpt[None, :] <= qpt[:, None]
                m_new = np.maximum(m, np.where(mask, s, -np.inf).max(axis=1))
                # Rows with nothing visible yet keep m = -inf; avoid inf - inf.
                shift = np.where(np.isfinite(m_new), m_new, 0.0)
                p = np.where(mask, np.exp(np.where(mask, s - shift[:, None], 0.0)), 0.0)
                alpha = np.where(np.isfinite(m), np.exp(m - shift), 0.0)
            l = alpha * l + _row_sum(p)[:, 0]
            acc = alpha[:, None] * acc + matmul(p, v_rows[j0:j0 + tile])
            m = m_new
        if not np.all(l > 0):
            raise DegenerateRowError("a query row attends to no key")
        out[i0:i0 + tile] = acc / l[:, None]
    return out


def paged_attention(q, cache, spec, position=None, seq=0):
    """Single-query attention walking the cache's block table.

    Pass one accumulates the max and softmax denominator over every visible
    slot in every block; pass two recomputes each block's scores and adds its
    normalised contribution. Slots after ``position`` are masked.

    With RoPE, feature pairs are treated as complex numbers so that
    ``<R(p) q, R(j) k> = Re(q e^{i(p-j)theta} conj(k))``; the query-side phase
    factors are tabulated once per call.
    """
    q = as_vector(q, "q")
    n = cache.filled.get(seq, 0)
    if n == 0:
        raise EmptyContextError("paged attention over an empty cache")
    if spec.pe_mode == "rerope":
        raise UnsupportedCombinationError("paged attention does not support rerope")
    position = n - 1 if position is None else int(position)
    scale = spec.scale
    if spec.rotary:
        rel = position - np.arange(min(n, position + 1), dtype=np.float64)
        q_phase = q.view(np.complex128)[None, :] * np.exp(1j * rel[:, None] * spec.rope.theta[None, :])

        def scores(start, keys):
            prod = q_phase[start:start + keys.shape[0]] * np.conj(keys.view(np.complex128))
            return np.add.accumulate(prod.real, axis=1)[:, -1] * scale
    else:
        def scores(start, keys):
            return np.add.accumulate(keys * q[None, :], axis=1)[:, -1] * scale

    def visible():
        for start, keys, values in cache.blocks(seq):
            if start > position:
                return
            keep = min(keys.shape[0], position - start + 1)
            yield start, keys[:keep], values[:keep]

    m, l = -np.inf, 0.0
    for start, keys, _ in visible():
        s = scores(start, keys)
        m_new = max(m, float(s.max()))
        l = l * math.exp(m - m_new) + float(np.add.accumulate(np.exp(s - m_new))[-1])
        m = m_new

    out = np.zeros(cache.dim)
    for start, keys, values in visible():
        w = np.exp(scores(start, keys) - m) / l
        out += matmul(w[None, :], values)[0]
    return out


def streaming_attention(q, cache, spec, position=None):
    """Attend over ``[sinks, rolling window]`` with slot-order positions."""
    q = as_vector(q, "q")
    n = len(cache)
    if n == 0:
        raise EmptyContextError("streaming attention over an empty cache")
    if spec.pe_mode == "rerope":
        raise UnsupportedCombinationError("streaming attention does not support rerope")
    position = n - 1 if position is None else position
    return naive_attention(
        q[None, :], cache.keys(), cache.values(), spec,
        q_positions=[position], k_positions=cache.positions(),
    )[0]
