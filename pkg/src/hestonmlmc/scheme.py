"""Split-step implicit Milstein stepping for the 3/2-model.

One step from ``y`` with increment ``dw``:

    z      solves  z = y + h f(z) - (h/2) g'g(z)          (a quadratic in z)
    y_next = z + g(z) dw + (1/2) g'g(z) dw^2

The quadratic always has exactly one positive root, and
``y_next = (2/3) z + (sqrt(3)/2 beta z dw + sqrt(z)/sqrt(3))^2 >= (2/3) z``,
so the iterates stay positive for every step size.  An explicit
Euler-Maruyama step is provided as a baseline.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import ModelParams
from .randomness import Role, StreamKey, coarsen_matrix, increment_matrix

__all__ = [
    "SCHEMES",
    "RATE_STEP_FACTOR",
    "SchemeState",
    "PathResult",
    "StepSizeWarning",
    "implicit_stage",
    "stage_residual",
    "milstein_update",
    "square_form_update",
    "milstein_step",
    "em_step",
    "rate_step_limit",
    "drive_paths",
    "simulate_path",
    "simulate_paths",
    "simulate_coupled_pair",
    "coupled_terminals",
]

SCHEMES = ("milstein", "em")

# theta in the step restriction h <= theta/mu of the rate theorem
RATE_STEP_FACTOR = 0.9

# increments held in memory per chunk of samples
_CHUNK_ELEMENTS = 1 << 20


class StepSizeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SchemeState:
    y: float
    z: float = math.nan
    step_index: int = 0


@dataclass(frozen=True)
class PathResult:
    terminal: float
    n_steps: int
    positivity_violations: int
    cost: int


def _check_h(h):
    if not np.all(np.asarray(h) > 0):
        raise ValueError(f"step size must be positive, got {h}")


def _scalar_or_array(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def implicit_stage(p: ModelParams, y, h):
    """Unique positive root of ``a z^2 + (1 - h mu) z - y = 0``, ``a = h(3/4 beta^2 + alpha)``.

    For ``1 - h mu >= 0`` the conjugate form ``2y / (b + sqrt(b^2 + 4ay))``
    is used to avoid cancellation at small ``h``.
    """
    _check_h(h)
    y = np.asarray(y, dtype=float)
    h = np.asarray(h, dtype=float)
    if not np.all(y > 0):
        raise ValueError("implicit stage needs y > 0")
    a = h * (0.75 * p.beta**2 + p.alpha)
    b = 1.0 - h * p.mu
    disc = np.sqrt(b * b + h * (3.0 * p.beta**2 + 4.0 * p.alpha) * y)
    # b + disc > 0 always since y > 0; only the selected branch is accurate
    z = np.where(b >= 0.0, 2.0 * y / (b + disc), (disc - b) / (2.0 * a))
    return _scalar_or_array(z)


def stage_residual(p: ModelParams, y, z, h):
    """``z - y - h f(z) + (h/2) g'g(z)``, evaluated term by term."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    h = np.asarray(h, dtype=float)
    return _scalar_or_array(z - y - h * z * (p.mu - p.alpha * z) + 0.75 * h * p.beta**2 * z * z)


def milstein_update(p: ModelParams, z, dw, h=None):
    """``z + beta z^{3/2} dw + (3/4) beta^2 z^2 dw^2``.

    Evaluated as ``z (1 + s + 0.75 s^2)`` with ``s = beta sqrt(z) dw``; the
    polynomial factor is at least 2/3, so the result is positive.  ``h`` is
    accepted for symmetry with the other step functions and only validated.
    """
    if h is not None:
        _check_h(h)
    z = np.asarray(z, dtype=float)
    if not np.all(z > 0):
        raise ValueError("Milstein update needs z > 0")
    s = p.beta * np.sqrt(z) * np.asarray(dw, dtype=float)
    return _scalar_or_array(z * (1.0 + s * (1.0 + 0.75 * s)))


def square_form_update(p: ModelParams, z, dw):
    """The same update written as ``(2/3) z + (sqrt(3)/2 beta z dw + sqrt(z/3))^2``."""
    z = np.asarray(z, dtype=float)
    dw = np.asarray(dw, dtype=float)
    sq = 0.5 * math.sqrt(3.0) * p.beta * z * dw + np.sqrt(z) / math.sqrt(3.0)
    return _scalar_or_array(2.0 / 3.0 * z + sq * sq)


def milstein_step(p: ModelParams, state: SchemeState, dw: float, h: float) -> SchemeState:
    z = implicit_stage(p, state.y, h)
    return SchemeState(milstein_update(p, z, dw), z, state.step_index + 1)


def em_step(p: ModelParams, y, dw, h):
    """Explicit Euler-Maruyama step.

    Nonpositive iterates are allowed; the diffusion uses ``|y|^{3/2}`` so
    the map stays defined past zero.  Zero is absorbing.
    """
    _check_h(h)
    y = np.asarray(y, dtype=float)
    h = np.asarray(h, dtype=float)
    ay = np.abs(y)
    return _scalar_or_array(y + h * y * (p.mu - p.alpha * y) + p.beta * ay * np.sqrt(ay) * dw)


def rate_step_limit(p: ModelParams, theta: float = RATE_STEP_FACTOR) -> float:
    """Largest step for which the order-one rate result applies."""
    return theta / p.mu


def drive_paths(p: ModelParams, dw, h, scheme="milstein", y0=None):
    """Run the scheme along each row of the increment matrix ``dw``.

    Returns ``(terminal, violations)`` arrays with one entry per row.
    """
    _check_h(h)
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    dw = np.ascontiguousarray(np.atleast_2d(dw), dtype=float)
    y0 = p.x0 if y0 is None else float(y0)
    if scheme == "milstein" and not y0 > 0:
        raise ValueError("initial value must be positive")
    terminal = np.empty(dw.shape[0])
    violations = np.empty(dw.shape[0], dtype=np.int64)
    kernel = _kernels.milstein_paths if scheme == "milstein" else _kernels.em_paths
    kernel(p.mu, p.alpha, p.beta, y0, float(h), dw, terminal, violations)
    return terminal, violations


def _chunks(start, stop, n_steps):
    size = max(1, _CHUNK_ELEMENTS // max(n_steps, 1))
    return [(a, min(a + size, stop)) for a in range(start, stop, size)]


def _map_chunks(fn, start, stop, n_steps, workers=1):
    """Apply ``fn(a, b)`` to fixed index chunks and concatenate in index order.

    Chunk boundaries depend only on the range and ``n_steps``, and every
    sample is computed independently, so the output does not depend on
    ``workers``.
    """
    chunks = _chunks(start, stop, n_steps)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: fn(*c), chunks))
    else:
        parts = [fn(a, b) for a, b in chunks]
    if not parts:
        return None
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(cols) for cols in zip(*parts))
    return np.concatenate(parts)


def simulate_paths(p: ModelParams, n_steps, seed, start, stop, level=None,
                   role=Role.SINGLE, scheme="milstein", workers=1):
    """Terminal values of independent paths for sample indices ``start..stop-1``.

    ``level`` is the stream label; by default ``log2(n_steps)`` rounded down.
    Returns ``(terminal, violations)``.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    h = p.t_end / n_steps
    if level is None:
        level = n_steps.bit_length() - 1

    def run(a, b):
        dw = increment_matrix(seed, level, role, np.arange(a, b, dtype=np.uint64), n_steps, h)
        return drive_paths(p, dw, h, scheme)

    out = _map_chunks(run, start, stop, n_steps, workers)
    if out is None:
        return np.empty(0), np.empty(0, dtype=np.int64)
    return out


def simulate_path(p: ModelParams, n_steps: int, key: StreamKey, scheme="milstein") -> PathResult:
    """One path with ``n_steps`` uniform steps over ``[0, T]`` driven by ``key``."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    h = p.t_end / n_steps
    dw = increment_matrix(key.seed, key.level, key.role, [key.sample_index], n_steps, h)
    terminal, violations = drive_paths(p, dw, h, scheme)
    return PathResult(float(terminal[0]), n_steps, int(violations[0]), n_steps)


def _check_level(level):
    if level < 1:
        raise ValueError(f"coupled pairs need level >= 1, got {level}")


def coupled_terminals(p: ModelParams, level, seed, start, stop, workers=1):
    """Fine/coarse terminal values for sample indices ``start..stop-1``.

    The fine path takes ``2^level`` steps; the coarse path takes half as
    many, driven by pairwise sums of the fine increments.
    """
    _check_level(level)
    n_fine = 2**level
    h = p.t_end / n_fine

    def run(a, b):
        dw = increment_matrix(seed, level, Role.FINE, np.arange(a, b, dtype=np.uint64), n_fine, h)
        fine, bad_f = drive_paths(p, dw, h)
        coarse, bad_c = drive_paths(p, coarsen_matrix(dw), 2.0 * h)
        return fine, coarse, bad_f + bad_c

    out = _map_chunks(run, start, stop, n_fine, workers)
    if out is None:
        return np.empty(0), np.empty(0)
    fine, coarse, bad = out
    if bad.any():
        # cannot happen for the Milstein scheme; guard against kernel regressions
        warnings.warn(f"{int(bad.sum())} nonpositive iterates at level {level}", RuntimeWarning)
    return fine, coarse


def simulate_coupled_pair(p: ModelParams, level: int, key: StreamKey):
    """One coupled (fine, coarse) pair; returns ``(fine_terminal, coarse_terminal, cost)``."""
    _check_level(level)
    n_fine = 2**level
    h = p.t_end / n_fine
    dw = increment_matrix(key.seed, key.level, key.role, [key.sample_index], n_fine, h)
    fine, _ = drive_paths(p, dw, h)
    coarse, _ = drive_paths(p, coarsen_matrix(dw), 2.0 * h)
    return float(fine[0]), float(coarse[0]), n_fine + n_fine // 2
