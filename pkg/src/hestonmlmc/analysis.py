"""Convergence, variance-decay and complexity studies, plus the monotonicity diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mlmc import EPSILON_MAX, MlmcConfig, run_mlmc
from .model import ModelParams, Payoff, payoff_eval, validate_params
from .randomness import Role, coarsen_matrix, increment_matrix
from .scheme import RATE_STEP_FACTOR, _map_chunks, coupled_terminals, drive_paths

__all__ = [
    "fit_slope",
    "ConvergenceReport",
    "mse_vs_reference",
    "VarianceRow",
    "VarianceStudy",
    "variance_decay_study",
    "ComplexityRow",
    "ComplexityStudy",
    "complexity_study",
    "MonotonicityConstants",
    "MonotonicityReport",
    "derive_monotonicity_constants",
    "monotonicity_grid",
    "monotonicity_lhs",
    "check_monotonicity",
    "moment_study",
]


def fit_slope(xs, ys):
    """Ordinary least-squares line through ``(xs, ys)``; returns ``(slope, intercept)``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-d sequences of equal length")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("xs and ys must be finite")
    if len(np.unique(xs)) < 2:
        raise ValueError("need at least two distinct x values")
    xm = xs.mean()
    ym = ys.mean()
    dx = xs - xm
    slope = float(np.dot(dx, ys - ym) / np.dot(dx, dx))
    return slope, float(ym - slope * xm)


def _is_pow2(n):
    return n > 0 and n & (n - 1) == 0


def _aggregate(dw, factor):
    """Sum consecutive groups of ``factor`` increments along the last axis."""
    if _is_pow2(factor):
        while factor > 1:
            dw = coarsen_matrix(dw)
            factor //= 2
        return dw
    return dw.reshape(dw.shape[0], -1, factor).sum(axis=-1)


# ---------------------------------------------------------------- strong error


@dataclass
class ConvergenceReport:
    step_sizes: list[float]
    rms_errors: list[float]
    fitted_slope: float
    intercept: float

    def pair_ratios(self) -> list[float]:
        """Error ratio between each pair of adjacent step sizes (coarse / fine)."""
        e = self.rms_errors
        return [e[i] / e[i + 1] for i in range(len(e) - 1)]


def mse_vs_reference(p: ModelParams, sample_count=5000, coarse_steps_list=(16, 32, 64, 128, 256, 512),
                     ref_steps=4096, seed=0, phi: Payoff | None = None, workers=1) -> ConvergenceReport:
    """Root-mean-square terminal error against a fine-step reference on the same Brownian path.

    Every coarse path is driven by sums of the reference increments.  The
    slope is fitted to ``log2(error)`` against ``log2(h)``.
    """
    steps = sorted(int(n) for n in coarse_steps_list)
    if not steps or steps[0] < 1:
        raise ValueError("coarse_steps_list must contain positive step counts")
    for n in steps:
        if ref_steps % n:
            raise ValueError(f"reference steps {ref_steps} not divisible by {n}")
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    phi = Payoff.identity() if phi is None else phi
    h_ref = p.t_end / ref_steps
    ref_level = ref_steps.bit_length() - 1

    def run(a, b):
        dw = increment_matrix(seed, ref_level, Role.SINGLE, np.arange(a, b, dtype=np.uint64), ref_steps, h_ref)
        ref, _ = drive_paths(p, dw, h_ref)
        ref = np.asarray(payoff_eval(phi, ref))
        sq = np.empty((b - a, len(steps)))
        for j, n in enumerate(steps):
            y, _ = drive_paths(p, _aggregate(dw, ref_steps // n), p.t_end / n)
            sq[:, j] = (np.asarray(payoff_eval(phi, y)) - ref) ** 2
        return sq

    sq = _map_chunks(run, 0, sample_count, ref_steps, workers)
    rms = [float(math.sqrt(np.mean(sq[:, j]))) for j in range(len(steps))]
    hs = [p.t_end / n for n in steps]
    if len(hs) >= 2 and all(e > 0 for e in rms):
        slope, intercept = fit_slope(np.log2(hs), np.log2(rms))
    else:
        slope = intercept = math.nan
    return ConvergenceReport(hs, rms, slope, intercept)


# ---------------------------------------------------------------- level variance


@dataclass(frozen=True)
class VarianceRow:
    level: int
    h: float
    var_diff: float
    var_fine: float
    mean_diff: float
    mean_fine: float


@dataclass
class VarianceStudy:
    rows: list[VarianceRow]
    slope_diff: float
    slope_fine: float

    @property
    def log2_var_diff(self):
        return [math.log2(r.var_diff) for r in self.rows]

    @property
    def log2_var_fine(self):
        return [math.log2(r.var_fine) for r in self.rows]


def variance_decay_study(p: ModelParams, phi: Payoff, levels=range(1, 11), n_samples=100_000,
                         seed=0, workers=1) -> VarianceStudy:
    """Per-level variance of ``phi(fine) - phi(coarse)`` and of ``phi(fine)``.

    Slopes are fitted to ``log2(variance)`` against the level.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    rows = []
    for level in levels:
        fine, coarse = coupled_terminals(p, level, seed, 0, n_samples, workers=workers)
        pf = np.asarray(payoff_eval(phi, fine))
        diff = pf - np.asarray(payoff_eval(phi, coarse))
        rows.append(VarianceRow(
            level=level,
            h=p.t_end / 2**level,
            var_diff=float(np.var(diff, ddof=1)),
            var_fine=float(np.var(pf, ddof=1)),
            mean_diff=float(np.mean(diff)),
            mean_fine=float(np.mean(pf)),
        ))
    lv = [r.level for r in rows]
    if len(rows) >= 2 and all(r.var_diff > 0 for r in rows):
        slope_diff = fit_slope(lv, [math.log2(r.var_diff) for r in rows])[0]
        slope_fine = fit_slope(lv, [math.log2(r.var_fine) for r in rows])[0]
    else:
        slope_diff = slope_fine = math.nan
    return VarianceStudy(rows, slope_diff, slope_fine)


# ---------------------------------------------------------------- complexity


@dataclass(frozen=True)
class ComplexityRow:
    epsilon: float
    total_cost: int
    levels_used: int
    estimate: float


@dataclass
class ComplexityStudy:
    rows: list[ComplexityRow]
    slope: float

    @property
    def scaled_costs(self):
        """``cost * epsilon^2`` per row; flat when cost grows like ``epsilon^-2``."""
        return [r.total_cost * r.epsilon**2 for r in self.rows]


def complexity_study(p: ModelParams, phi: Payoff, epsilons=(0.05, 0.02, 0.01, 0.005), seed=0,
                     workers=1, **mlmc_options) -> ComplexityStudy:
    """Run MLMC at each accuracy and fit ``log(total_cost)`` against ``log(epsilon)``."""
    for eps in epsilons:
        if not 0 < eps < EPSILON_MAX:
            raise ValueError(f"epsilon {eps} outside (0, e^-1)")
    rows = []
    for eps in epsilons:
        res = run_mlmc(p, phi, MlmcConfig(eps, seed=seed, workers=workers, **mlmc_options))
        rows.append(ComplexityRow(eps, res.total_cost, res.levels_used, res.estimate))
    if len(rows) >= 2:
        slope = fit_slope(np.log([r.epsilon for r in rows]), np.log([r.total_cost for r in rows]))[0]
    else:
        slope = math.nan
    return ComplexityStudy(rows, slope)


# ---------------------------------------------------------------- monotonicity


@dataclass(frozen=True)
class MonotonicityConstants:
    q: float
    rho: float
    theta_restrict: float
    l0: float
    l1: float
    c_tilde: float
    # quadratic in s = x + y bounding Theta / (h (x - y)^2): a s^2 + b s - mu^2
    a: float = field(default=math.nan, compare=False)
    b: float = field(default=math.nan, compare=False)

    @property
    def vertex(self) -> float:
        """Maximiser ``s*`` of the bounding quadratic over ``s >= 0``."""
        return max(0.0, self.b / (2.0 * abs(self.a)))


def derive_monotonicity_constants(p: ModelParams, t_end: float | None = None, rho: float | None = None,
                                  q: float | None = None, theta: float = RATE_STEP_FACTOR
                                  ) -> MonotonicityConstants:
    """Constants for the two one-sided Lipschitz inequalities of the scheme.

    ``q`` defaults to the midpoint of ``(2, 1 + 8 alpha / (9 beta^2))`` and
    ``rho`` to the midpoint of ``(1, rho_max)`` where ``rho_max`` makes
    ``(9/8) rho beta^4 - (3/2) beta^2 alpha - alpha^2`` vanish.  Either can be
    given explicitly instead.
    """
    if not validate_params(p).monotone_ok:
        raise ValueError("monotonicity constants require alpha > 1.5 beta^2")
    t_end = p.t_end if t_end is None else float(t_end)
    mu, al, b2 = p.mu, p.alpha, p.beta**2
    q_max = 1.0 + 8.0 * al / (9.0 * b2)
    if q is None:
        q = 0.5 * (2.0 + q_max)
    elif not 2.0 < q < q_max:
        raise ValueError(f"q must lie in (2, {q_max:.6g})")
    rho_max = (1.5 * b2 * al + al * al) / (9.0 / 8.0 * b2 * b2)
    if rho is None:
        rho = 0.5 * (1.0 + rho_max)
    elif not 1.0 < rho < rho_max:
        raise ValueError(f"rho must lie in (1, {rho_max:.6g})")
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    a = 9.0 / 8.0 * rho * b2 * b2 - 1.5 * b2 * al - al * al
    b = 1.5 * b2 * mu + 2.0 * mu * al
    # max over s >= 0 of a s^2 + b s - mu^2 with a < 0, b > 0
    c_tilde = b * b / (4.0 * -a) - mu * mu
    # the bound is used as c_tilde * h <= c_tilde * T, which needs c_tilde >= 0
    c_tilde = max(c_tilde, 0.0)
    return MonotonicityConstants(q=q, rho=rho, theta_restrict=theta, l0=mu, l1=2.0 * mu + c_tilde * t_end,
                                 c_tilde=c_tilde, a=a, b=b)


def monotonicity_grid(n, t_end=1.0, seed=0, x_range=(1e-3, 1e2), h_min=1e-4):
    """Random ``(x, y, h)`` triples, log-uniform in each coordinate."""
    rng = np.random.default_rng(seed)
    lo, hi = math.log(x_range[0]), math.log(x_range[1])
    x = np.exp(rng.uniform(lo, hi, n))
    y = np.exp(rng.uniform(lo, hi, n))
    h = np.exp(rng.uniform(math.log(h_min), math.log(t_end), n))
    return x, y, h


def monotonicity_lhs(p: ModelParams, consts: MonotonicityConstants, x, y, h):
    """Left-hand sides of both inequalities, term by term."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = np.asarray(h, dtype=float)
    b2 = p.beta**2
    d = x - y
    df = x * (p.mu - p.alpha * x) - y * (p.mu - p.alpha * y)
    dg = p.beta * (x * np.sqrt(x) - y * np.sqrt(y))
    dgg = 1.5 * b2 * (x * x - y * y)
    first = d * (df - 0.5 * dgg)
    second = (2.0 * d * df + (consts.q - 1.0) * dg * dg + 0.5 * consts.rho * h * dgg * dgg
              + h * dgg * df - h * df * df)
    return first, second


@dataclass
class MonotonicityReport:
    n_triples: int
    first_violations: np.ndarray
    second_violations: np.ndarray
    max_excess_first: float
    max_excess_second: float

    @property
    def ok(self) -> bool:
        return len(self.first_violations) == 0 and len(self.second_violations) == 0


def check_monotonicity(p: ModelParams, consts: MonotonicityConstants, x, y, h, tol=1e-9) -> MonotonicityReport:
    """Indices of triples where either inequality fails beyond ``tol * (1 + (x - y)^2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("x and y must be positive")
    first, second = monotonicity_lhs(p, consts, x, y, h)
    d2 = (x - y) ** 2
    slack = tol * (1.0 + d2)
    ex1 = first - consts.l0 * d2
    ex2 = second - consts.l1 * d2
    return MonotonicityReport(
        n_triples=int(x.size),
        first_violations=np.flatnonzero(ex1 > slack),
        second_violations=np.flatnonzero(ex2 > slack),
        max_excess_first=float(np.max(ex1 - slack)) if x.size else math.nan,
        max_excess_second=float(np.max(ex2 - slack)) if x.size else math.nan,
    )


# ---------------------------------------------------------------- moments


def moment_study(p: ModelParams, order=6, steps_list=(32, 256), n_samples=10_000, seed=0, workers=1):
    """Sample mean of ``Y_N^order`` for each step count, all on common Brownian paths.

    Returns a dict ``{n_steps: moment}``.
    """
    finest = max(steps_list)
    for n in steps_list:
        if finest % n:
            raise ValueError("step counts must divide the largest one")
    h = p.t_end / finest

    def run(a, b):
        dw = increment_matrix(seed, finest.bit_length() - 1, Role.SINGLE, np.arange(a, b, dtype=np.uint64), finest, h)
        cols = []
        for n in steps_list:
            y, _ = drive_paths(p, _aggregate(dw, finest // n), p.t_end / n)
            cols.append(y**order)
        return np.stack(cols, axis=1)

    vals = _map_chunks(run, 0, n_samples, finest, workers)
    return {n: float(np.mean(vals[:, j])) for j, n in enumerate(steps_list)}
