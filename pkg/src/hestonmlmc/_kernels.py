"""Compiled inner loops.  Semantics mirror the numpy code in randomness/scheme."""

import numba
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S21 = np.uint64(21)
_S11 = np.uint64(11)
_SCALE = 2.0**-53


@numba.njit(cache=True, nogil=True)
def philox_uniforms(key0, key1, tag, indices, pair_start, n_pairs, out):
    """Fill ``out[i, 2j:2j+2]`` with two uniforms from Philox4x32-10.

    Counter = (pair_start + j, index lo, index hi, tag), key = (key0, key1).
    """
    for i in range(indices.shape[0]):
        s = np.uint64(indices[i])
        s_lo = s & _MASK
        s_hi = s >> _S32
        for j in range(n_pairs):
            c0 = np.uint64(pair_start + j)
            c1 = s_lo
            c2 = s_hi
            c3 = np.uint64(tag)
            k0 = np.uint64(key0)
            k1 = np.uint64(key1)
            for _ in range(10):
                p0 = c0 * _M0
                p1 = c2 * _M1
                n0 = ((p1 >> _S32) ^ c1 ^ k0) & _MASK
                n2 = ((p0 >> _S32) ^ c3 ^ k1) & _MASK
                c1 = p1 & _MASK
                c3 = p0 & _MASK
                c0 = n0
                c2 = n2
                k0 = (k0 + _W0) & _MASK
                k1 = (k1 + _W1) & _MASK
            out[i, 2 * j] = (np.float64((c0 << _S21) | (c1 >> _S11)) + 0.5) * _SCALE
            out[i, 2 * j + 1] = (np.float64((c2 << _S21) | (c3 >> _S11)) + 0.5) * _SCALE


@numba.njit(cache=True, nogil=True)
def milstein_paths(mu, alpha, beta, y0, h, dw, terminal, violations):
    """Iterate the split-step scheme along each row of ``dw``."""
    a = h * (0.75 * beta * beta + alpha)
    b = 1.0 - h * mu
    c4 = h * (3.0 * beta * beta + 4.0 * alpha)
    for i in range(dw.shape[0]):
        y = y0
        bad = 0
        for n in range(dw.shape[1]):
            disc = np.sqrt(b * b + c4 * y)
            if b >= 0.0:
                z = 2.0 * y / (b + disc)
            else:
                z = (disc - b) / (2.0 * a)
            s = beta * np.sqrt(z) * dw[i, n]
            y = z * (1.0 + s * (1.0 + 0.75 * s))
            if not y > 0.0:
                bad += 1
        terminal[i] = y
        violations[i] = bad


@numba.njit(cache=True, nogil=True)
def em_paths(mu, alpha, beta, y0, h, dw, terminal, violations):
    """Explicit Euler-Maruyama with |y|^{3/2} in the diffusion."""
    for i in range(dw.shape[0]):
        y = y0
        bad = 0
        for n in range(dw.shape[1]):
            ay = abs(y)
            y = y + h * y * (mu - alpha * y) + beta * ay * np.sqrt(ay) * dw[i, n]
            if not y > 0.0:
                bad += 1
        terminal[i] = y
        violations[i] = bad
