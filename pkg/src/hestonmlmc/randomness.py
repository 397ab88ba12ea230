"""Keyed, counter-based Brownian increments.

Every increment is a pure function of ``(seed, level, role, sample_index,
step)``.  The bits come from the Philox4x32-10 block cipher evaluated on a
counter built from those fields, so any subset of samples or steps can be
generated in any order, by any number of workers, and always reproduces the
same values.  Uniforms are mapped to normals by the inverse normal CDF.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import _kernels

__all__ = [
    "Role",
    "StreamKey",
    "IncrementBlock",
    "philox4x32",
    "uniform_matrix",
    "reference_uniform_matrix",
    "increment_matrix",
    "sample_increments",
    "coarsen",
    "coarsen_matrix",
    "brownian_total",
]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_ROUNDS = 10


class Role(enum.IntEnum):
    """Which kind of path a stream drives."""

    FINE = 0
    SINGLE = 1


@dataclass(frozen=True)
class StreamKey:
    seed: int
    level: int
    sample_index: int
    role: Role = Role.FINE

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if not 0 <= self.level < 2**16:
            raise ValueError(f"level must be in [0, 65535], got {self.level}")
        if not 0 <= self.sample_index < 2**64:
            raise ValueError(f"sample_index must fit in 64 unsigned bits, got {self.sample_index}")
        object.__setattr__(self, "role", Role(self.role))


@dataclass(frozen=True)
class IncrementBlock:
    """Consecutive Brownian increments ``W(t_{n+1}) - W(t_n)`` on a uniform grid."""

    step_size: float
    values: np.ndarray

    def __len__(self):
        return len(self.values)


def philox4x32(counter, key, rounds=_ROUNDS):
    """Philox4x32 on arrays of counters.

    ``counter`` is a sequence of four uint32 arrays (broadcastable against
    each other), ``key`` a pair of uint32 scalars.  Returns the four output
    words as uint32 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.uint32(key[0])
    k1 = np.uint32(key[1])
    for i in range(rounds):
        if i:
            k0 = np.uint32((int(k0) + int(_W0)) & 0xFFFFFFFF)
            k1 = np.uint32((int(k1) + int(_W1)) & 0xFFFFFFFF)
        p0 = c0 * _M0
        p1 = c2 * _M1
        hi0 = p0 >> _SHIFT32
        hi1 = p1 >> _SHIFT32
        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            p1 & _MASK32,
            hi0 ^ c3 ^ np.uint64(k1),
            p0 & _MASK32,
        )
    return tuple(c.astype(np.uint32) for c in (c0, c1, c2, c3))


def _uniform53(hi, lo):
    # 53 random bits -> open interval (0, 1); 0 and 1 are unreachable.
    bits = (hi.astype(np.uint64) << np.uint64(21)) | (lo.astype(np.uint64) >> np.uint64(11))
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def _counter_layout(level, role, step_start, n_steps):
    # each Philox call yields 4 words = 2 uniforms: steps 2k and 2k+1
    if n_steps < 0 or step_start < 0:
        raise ValueError("step range must be nonnegative")
    k_first = step_start // 2
    k_last = (step_start + n_steps + 1) // 2
    tag = (int(level) & 0xFFFF) | (int(Role(role)) << 16)
    return k_first, k_last, tag, step_start - 2 * k_first


def uniform_matrix(seed, level, role, sample_indices, n_steps, step_start=0):
    """Open-interval uniforms, shape ``(len(sample_indices), n_steps)``."""
    k_first, k_last, tag, offset = _counter_layout(level, role, step_start, n_steps)
    idx = np.ascontiguousarray(sample_indices, dtype=np.uint64).reshape(-1)
    seed = int(seed)
    u = np.empty((idx.shape[0], 2 * (k_last - k_first)))
    _kernels.philox_uniforms(seed & 0xFFFFFFFF, seed >> 32, tag, idx, k_first, k_last - k_first, u)
    return u[:, offset:offset + n_steps]


def reference_uniform_matrix(seed, level, role, sample_indices, n_steps, step_start=0):
    """Same values as :func:`uniform_matrix`, computed with plain numpy."""
    k_first, k_last, tag, offset = _counter_layout(level, role, step_start, n_steps)
    idx = np.asarray(sample_indices, dtype=np.uint64).reshape(-1, 1)
    pair = np.arange(k_first, k_last, dtype=np.uint64).reshape(1, -1)
    seed = int(seed)
    w0, w1, w2, w3 = philox4x32(
        (pair, idx & _MASK32, idx >> _SHIFT32, np.uint64(tag)),
        (seed & 0xFFFFFFFF, seed >> 32),
    )
    u = np.empty((idx.shape[0], 2 * pair.shape[1]))
    u[:, 0::2] = _uniform53(w0, w1)
    u[:, 1::2] = _uniform53(w2, w3)
    return u[:, offset:offset + n_steps]


def increment_matrix(seed, level, role, sample_indices, n_steps, h, step_start=0):
    """Increments for many samples at once.

    Returns an array of shape ``(len(sample_indices), n_steps)`` whose row
    ``i`` holds steps ``step_start .. step_start + n_steps - 1`` of the
    stream keyed by ``(seed, level, role, sample_indices[i])``, scaled to
    ``Normal(0, h)``.
    """
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    z = ndtri(uniform_matrix(seed, level, role, sample_indices, n_steps, step_start))
    z *= np.sqrt(h)
    return z


def sample_increments(key: StreamKey, n_steps: int, h: float) -> IncrementBlock:
    """``n_steps`` i.i.d. ``Normal(0, h)`` increments for one stream."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    values = increment_matrix(key.seed, key.level, key.role, [key.sample_index], n_steps, h)[0]
    return IncrementBlock(float(h), values)


def coarsen_matrix(dw):
    """Pairwise sums along the last axis: ``out[..., k] = dw[..., 2k] + dw[..., 2k+1]``."""
    dw = np.asarray(dw, dtype=float)
    if dw.shape[-1] % 2:
        raise ValueError(f"cannot coarsen an odd number of increments ({dw.shape[-1]})")
    return dw[..., 0::2] + dw[..., 1::2]


def coarsen(fine: IncrementBlock) -> IncrementBlock:
    """Coarse-grid increments driven by the same Brownian path as ``fine``."""
    return IncrementBlock(2.0 * fine.step_size, coarsen_matrix(fine.values))


def brownian_total(dw):
    """Sum of increments along the last axis, reduced in pairwise-tree order.

    For power-of-two lengths the reduction is exactly a chain of
    :func:`coarsen_matrix` calls, so a fine block and its coarsening give
    bit-identical totals.
    """
    dw = np.asarray(dw, dtype=float)
    while dw.shape[-1] > 1:
        if dw.shape[-1] % 2:
            dw = np.concatenate([coarsen_matrix(dw[..., :-1]), dw[..., -1:]], axis=-1)
        else:
            dw = coarsen_matrix(dw)
    return dw[..., 0]
