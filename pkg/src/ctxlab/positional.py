"""Positional encodings: sinusoidal tables, rotary embeddings and windowed ReRoPE.

Rotations pair consecutive features ``(x[2j], x[2j+1])`` and rotate the column
vector counter-clockwise by ``pos * theta[j]``::

    [x'_2j  ]   [cos -sin] [x_2j  ]
    [x'_2j+1] = [sin  cos] [x_2j+1]
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import ConfigError, ShapeError
from .linalg import as_matrix, as_vector, matmul


def sinusoidal_encoding(pos, dim):
    """Absolute encoding: ``sin`` on even slots, ``cos`` on odd slots."""
    if dim <= 0 or dim % 2:
        raise ShapeError(f"sinusoidal encoding needs a positive even dim, got {dim}")
    return sinusoidal_table(np.array([pos]), dim)[0]


def sinusoidal_table(positions, dim):
    if dim <= 0 or dim % 2:
        raise ShapeError(f"sinusoidal encoding needs a positive even dim, got {dim}")
    positions = np.asarray(positions, dtype=np.float64)
    j = np.arange(dim // 2)
    angles = positions[:, None] / np.power(10000.0, 2.0 * j / dim)[None, :]
    out = np.empty((positions.shape[0], dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


@dataclass(frozen=True)
class RopeConfig:
    """Rotary frequency schedule ``theta_j = base ** (-2j / head_dim)``.

    ``frequencies`` overrides the geometric schedule with explicit per-pair
    angular rates (radians per position).
    """

    head_dim: int
    base: float = 10000.0
    frequencies: tuple = None

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2:
            raise ConfigError(f"head_dim must be positive and even, got {self.head_dim}")
        if not self.base > 1:
            raise ConfigError(f"rope base must exceed 1, got {self.base}")
        if self.frequencies is not None:
            freqs = tuple(float(f) for f in self.frequencies)
            if len(freqs) != self.head_dim // 2:
                raise ConfigError("need one frequency per rotated pair")
            object.__setattr__(self, "frequencies", freqs)

    @cached_property
    def theta(self):
        if self.frequencies is not None:
            theta = np.array(self.frequencies)
        else:
            theta = np.power(float(self.base), -2.0 * np.arange(self.head_dim // 2) / self.head_dim)
        theta.setflags(write=False)
        return theta


@dataclass(frozen=True)
class ReRopeConfig:
    """Window ``w`` and leak factor ``k``; ``k = inf`` clamps distances at ``w``."""

    rope: RopeConfig
    window: int
    leak_factor: float = math.inf

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError(f"rerope window must be >= 1, got {self.window}")
        if not (self.leak_factor >= 1):
            raise ConfigError(f"leak factor must be >= 1 or inf, got {self.leak_factor}")

    def effective_distance(self, distance):
        """Map relative distances to the rotation distance actually applied."""
        d = np.asarray(distance, dtype=np.float64)
        mag = np.abs(d)
        if math.isinf(self.leak_factor):
            leaked = np.full_like(mag, float(self.window))
        else:
            leaked = self.window + (mag - self.window) / self.leak_factor
        return np.sign(d) * np.where(mag < self.window, mag, leaked)


def rotate(rows, positions, cfg):
    """Apply the rotary embedding to every row at its own (possibly fractional) position."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != cfg.head_dim:
        raise ShapeError(f"rows must be (n, {cfg.head_dim}), got {rows.shape}")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1)
    if positions.shape[0] != rows.shape[0]:
        raise ShapeError(f"{positions.shape[0]} positions for {rows.shape[0]} rows")
    return _rotate(rows, positions, cfg.theta)


def _rotate(rows, positions, theta):
    angles = positions[:, None] * theta[None, :]
    cos, sin = np.cos(angles), np.sin(angles)
    even, odd = rows[:, 0::2], rows[:, 1::2]
    out = np.empty_like(rows)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def apply_rope(x, pos, cfg):
    x = as_vector(x, "x")
    if x.shape[0] != cfg.head_dim:
        raise ShapeError(f"vector length {x.shape[0]} != head_dim {cfg.head_dim}")
    return rotate(x[None, :], [pos], cfg)[0]


def _positions(positions, n):
    if positions is None:
        return np.arange(n, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1)
    if positions.shape[0] != n:
        raise ShapeError(f"{positions.shape[0]} positions for {n} rows")
    return positions


def rope_scores(q_rows, k_rows, q_positions, k_positions, cfg):
    """Unscaled ``<R(p_i) q_i, R(p_j) k_j>`` for every query/key pair."""
    q_rows = as_matrix(q_rows, "q_rows")
    k_rows = as_matrix(k_rows, "k_rows")
    if q_rows.shape[1] != cfg.head_dim or k_rows.shape[1] != cfg.head_dim:
        raise ShapeError(f"q/k width must equal head_dim {cfg.head_dim}")
    qp = _positions(q_positions, q_rows.shape[0])
    kp = _positions(k_positions, k_rows.shape[0])
    return matmul(rotate(q_rows, qp, cfg), rotate(k_rows, kp, cfg).T)


def rerope_scores(q_rows, k_rows, cfg, q_positions=None, k_positions=None, chunk=64):
    """Windowed rotary scores: plain RoPE inside the window, leaky/clamped outside.

    Both score matrices are built in full and merged by the ``|i - j| < w`` mask.
    Outside the window only the relative angle matters, so the query is rotated by
    the effective distance and the key is left unrotated.
    """
    q_rows = as_matrix(q_rows, "q_rows")
    k_rows = as_matrix(k_rows, "k_rows")
    rope = cfg.rope
    qp = _positions(q_positions, q_rows.shape[0])
    kp = _positions(k_positions, k_rows.shape[0])
    inside = rope_scores(q_rows, k_rows, qp, kp, rope)
    rel = qp[:, None] - kp[None, :]
    in_window = np.abs(rel) < cfg.window
    if in_window.all():
        return inside

    if math.isinf(cfg.leak_factor):
        # Clamp: a single rotation per query row (sign of the distance aside).
        fwd = matmul(rotate(q_rows, np.full(qp.shape, float(cfg.window)), rope), k_rows.T)
        back = matmul(rotate(q_rows, np.full(qp.shape, -float(cfg.window)), rope), k_rows.T)
        outside = np.where(rel >= 0, fwd, back)
    else:
        outside = _distance_scores(q_rows, k_rows, cfg.effective_distance(rel), rope, chunk)
    return np.where(in_window, inside, outside)


def _distance_scores(q_rows, k_rows, dist, rope, chunk):
    # <R(d_ij) q_i, k_j> = sum_p cos(d theta_p) A_ijp + sin(d theta_p) B_ijp
    theta = rope.theta
    qe, qo = q_rows[:, 0::2], q_rows[:, 1::2]
    ke, ko = k_rows[:, 0::2], k_rows[:, 1::2]
    out = np.empty(dist.shape)
    for start in range(0, q_rows.shape[0], chunk):
        sl = slice(start, start + chunk)
        ang = dist[sl, :, None] * theta[None, None, :]
        a = qe[sl, None, :] * ke[None, :, :] + qo[sl, None, :] * ko[None, :, :]
        b = qe[sl, None, :] * ko[None, :, :] - qo[sl, None, :] * ke[None, :, :]
        out[sl] = np.sum(np.cos(ang) * a + np.sin(ang) * b, axis=-1)
    return out
