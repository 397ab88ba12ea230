"""Adaptive multilevel Monte Carlo for E[phi(X(T))].

Level ``l`` uses step ``h_l = T / 2^l``.  The base level ``l_min`` averages
``phi`` over single paths; each finer level averages the coupled difference
``phi(fine) - phi(coarse)``, the coarse path being driven by pairwise sums of
the fine increments.  Per-sample values depend only on ``(seed, level,
sample_index)``, so samples can be added incrementally and in parallel
without changing any result.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .model import ModelParams, Payoff, payoff_eval, validate_params
from .randomness import Role
from .scheme import coupled_terminals, simulate_paths

__all__ = [
    "EPSILON_MAX",
    "MlmcConfig",
    "LevelStats",
    "MlmcResult",
    "MlmcNotConverged",
    "level_cost",
    "level_samples",
    "estimate_level",
    "allocate_samples",
    "run_mlmc",
    "run_single_mc",
]

logger = logging.getLogger(__name__)

EPSILON_MAX = math.exp(-1.0)


@dataclass(frozen=True)
class MlmcConfig:
    epsilon: float
    l_min: int = 0
    l_max: int = 16
    initial_samples: int = 100
    chi: float = 1.0
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.epsilon < EPSILON_MAX:
            raise ValueError(f"epsilon must lie in (0, e^-1) = (0, {EPSILON_MAX:.6f}), got {self.epsilon}")
        if self.l_min < 0 or self.l_max < self.l_min:
            raise ValueError(f"need 0 <= l_min <= l_max, got l_min={self.l_min}, l_max={self.l_max}")
        if self.initial_samples < 2:
            raise ValueError("initial_samples must be >= 2")
        if not self.chi > 0:
            raise ValueError("chi must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class LevelStats:
    level: int
    n_samples: int
    mean_diff: float
    var_diff: float
    cost_per_sample: int
    h: float


@dataclass
class MlmcResult:
    estimate: float
    levels: list[LevelStats]
    total_cost: int
    bias_estimate: float
    statistical_error_estimate: float
    epsilon: float
    converged: bool = True

    @property
    def levels_used(self) -> int:
        return len(self.levels)

    @property
    def finest_level(self) -> int:
        return self.levels[-1].level


class MlmcNotConverged(RuntimeError):
    """Raised when the bias test still fails at ``l_max``; carries the partial result."""

    def __init__(self, message, result: MlmcResult):
        super().__init__(message)
        self.result = result


def level_cost(level: int, l_min: int = 0) -> int:
    """Scheme steps per sample on ``level``."""
    if level == l_min:
        return 2**level
    return 2**level + 2 ** (level - 1)


def level_samples(p: ModelParams, phi: Payoff, level: int, start: int, stop: int, seed: int,
                  l_min: int = 0, workers: int = 1) -> np.ndarray:
    """Per-sample values ``phi(fine) - phi(coarse)`` (or ``phi`` on the base level)."""
    if level < l_min:
        raise ValueError(f"level {level} is below l_min={l_min}")
    if level == l_min:
        terminal, _ = simulate_paths(p, 2**level, seed, start, stop, level=level,
                                     role=Role.SINGLE, workers=workers)
        return np.asarray(payoff_eval(phi, terminal), dtype=float)
    fine, coarse = coupled_terminals(p, level, seed, start, stop, workers=workers)
    return np.asarray(payoff_eval(phi, fine), dtype=float) - np.asarray(payoff_eval(phi, coarse), dtype=float)


def _stats(level, values, p, l_min):
    n = len(values)
    return LevelStats(
        level=level,
        n_samples=n,
        mean_diff=float(np.mean(values)),
        var_diff=float(np.var(values, ddof=1)) if n >= 2 else math.nan,
        cost_per_sample=level_cost(level, l_min),
        h=p.t_end / 2**level,
    )


def estimate_level(p: ModelParams, phi: Payoff, level: int, n: int, seed: int,
                   l_min: int = 0, workers: int = 1) -> LevelStats:
    """Sample mean and unbiased variance of the level estimator from samples ``0..n-1``."""
    if n < 2:
        raise ValueError(f"need n >= 2 samples, got {n}")
    return _stats(level, level_samples(p, phi, level, 0, n, seed, l_min, workers), p, l_min)


def allocate_samples(levels, epsilon: float, floor: int = 100) -> list[int]:
    """Sample counts minimising total cost subject to ``sum V_l / N_l <= epsilon^2 / 2``.

    ``N_l = ceil(2 eps^-2 sqrt(V_l / C_l) sum_k sqrt(V_k C_k))``; a level with
    zero variance gets ``floor`` samples.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    v = np.array([s.var_diff for s in levels], dtype=float)
    c = np.array([s.cost_per_sample for s in levels], dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v < 0) or np.any(c <= 0):
        raise ValueError("every level needs a finite variance and positive cost")
    total = float(np.sum(np.sqrt(v * c)))
    out = []
    for vl, cl in zip(v, c):
        if vl == 0.0:
            out.append(int(floor))
        else:
            out.append(int(math.ceil(2.0 / epsilon**2 * math.sqrt(vl / cl) * total)))
    return out


def _summarise(stats, cfg):
    estimate = 0.0
    for s in stats:
        estimate += s.mean_diff
    total_cost = sum(s.n_samples * s.cost_per_sample for s in stats)
    stat_err = math.sqrt(sum(s.var_diff / s.n_samples for s in stats))
    bias = abs(stats[-1].mean_diff) / (2.0**cfg.chi - 1.0)
    return estimate, total_cost, bias, stat_err


def run_mlmc(p: ModelParams, phi: Payoff, cfg: MlmcConfig) -> MlmcResult:
    """Adaptive MLMC to root-mean-square accuracy ``cfg.epsilon``.

    Half of ``epsilon^2`` is given to the variance and half to the squared
    bias.  The bias on the finest level ``L`` is estimated as
    ``|mean_L| / (2^chi - 1)``; levels are added until it drops below
    ``epsilon / sqrt(2)``.

    Raises MlmcNotConverged when ``l_max`` is reached first.
    """
    report = validate_params(p)
    for msg in report.messages():
        logger.warning(msg)
    eps = cfg.epsilon
    L = min(cfg.l_min + 2, cfg.l_max)
    values = {l: np.empty(0) for l in range(cfg.l_min, L + 1)}
    target = {l: cfg.initial_samples for l in values}

    def extend():
        for l, vals in values.items():
            if target[l] > len(vals):
                new = level_samples(p, phi, l, len(vals), target[l], cfg.seed, cfg.l_min, cfg.workers)
                values[l] = np.concatenate([vals, new])

    while True:
        extend()
        stats = [_stats(l, values[l], p, cfg.l_min) for l in sorted(values)]
        wanted = allocate_samples(stats, eps, floor=cfg.initial_samples)
        short = [(s.level, n) for s, n in zip(stats, wanted) if n > s.n_samples]
        if short:
            for l, n in short:
                target[l] = n
            logger.debug("eps=%g L=%d extending %s", eps, L, short)
            continue
        estimate, total_cost, bias, stat_err = _summarise(stats, cfg)
        result = MlmcResult(estimate, stats, total_cost, bias, stat_err, eps)
        if bias <= eps / math.sqrt(2.0):
            logger.info("eps=%g converged with L=%d, cost=%d", eps, L, total_cost)
            return result
        if L >= cfg.l_max:
            raise MlmcNotConverged(
                f"bias estimate {bias:.3g} exceeds {eps / math.sqrt(2.0):.3g} at l_max={cfg.l_max}",
                replace(result, converged=False),
            )
        L += 1
        values[L] = np.empty(0)
        target[L] = cfg.initial_samples


def run_single_mc(p: ModelParams, phi: Payoff, n_steps: int, n_samples: int, seed: int,
                  workers: int = 1):
    """Plain Monte Carlo with ``n_steps`` Milstein steps per path.

    Returns ``(mean, std_error, cost)``.  Streams are labelled like the MLMC
    base level with the same step count, so use a distinct seed when the two
    are compared.
    """
    if n_samples < 2:
        raise ValueError(f"need n_samples >= 2, got {n_samples}")
    terminal, _ = simulate_paths(p, n_steps, seed, 0, n_samples, role=Role.SINGLE, workers=workers)
    values = np.asarray(payoff_eval(phi, terminal), dtype=float)
    mean = float(np.mean(values))
    std_error = float(np.std(values, ddof=1) / math.sqrt(n_samples))
    return mean, std_error, n_steps * n_samples
