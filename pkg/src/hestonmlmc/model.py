"""Heston 3/2-model coefficients, payoffs and parameter checks.

The model is the scalar Ito SDE

    dX = X (mu - alpha X) dt + beta X^{3/2} dW,   X(0) = x0 > 0.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "PayoffKind",
    "Payoff",
    "ValidationReport",
    "ParameterWarning",
    "drift",
    "diffusion",
    "diffusion_correction",
    "payoff_eval",
    "validate_params",
]


class ParameterWarning(UserWarning):
    """Parameters fall outside the hypotheses of the convergence results."""


@dataclass(frozen=True)
class ModelParams:
    mu: float = 1.0
    alpha: float = 2.5
    beta: float = 1.0
    x0: float = 1.0
    t_end: float = 1.0

    def __post_init__(self):
        for name in ("mu", "alpha", "beta", "x0", "t_end"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a finite positive number, got {value!r}")
            object.__setattr__(self, name, float(value))


class PayoffKind(str, enum.Enum):
    CALL = "call"
    IDENTITY = "identity"


@dataclass(frozen=True)
class Payoff:
    """A Lipschitz payoff from a closed set of kinds."""

    kind: PayoffKind = PayoffKind.CALL
    strike: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "kind", PayoffKind(self.kind))
        if self.kind is PayoffKind.CALL and not (math.isfinite(self.strike) and self.strike >= 0):
            raise ValueError(f"call strike must be finite and >= 0, got {self.strike!r}")
        object.__setattr__(self, "strike", float(self.strike))

    @classmethod
    def call(cls, strike=0.05):
        return cls(PayoffKind.CALL, strike)

    @classmethod
    def identity(cls):
        return cls(PayoffKind.IDENTITY, 0.0)

    @property
    def lipschitz_bound(self) -> float:
        return 1.0

    def __call__(self, x):
        return payoff_eval(self, x)


def _positive(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(arr > 0):
        raise ValueError("coefficients are only defined for x > 0")
    return arr


def _out(arr):
    return float(arr) if arr.ndim == 0 else arr


def drift(p: ModelParams, x):
    """f(x) = x (mu - alpha x)."""
    x = _positive(x)
    return _out(x * (p.mu - p.alpha * x))


def diffusion(p: ModelParams, x):
    """g(x) = beta x^{3/2}."""
    x = _positive(x)
    return _out(p.beta * x * np.sqrt(x))


def diffusion_correction(p: ModelParams, x):
    """Milstein coefficient g'(x) g(x) = (3/2) beta^2 x^2."""
    x = _positive(x)
    return _out(1.5 * p.beta**2 * x * x)


def payoff_eval(phi: Payoff, x):
    x = np.asarray(x, dtype=float)
    if phi.kind is PayoffKind.CALL:
        return _out(np.maximum(x - phi.strike, 0.0))
    return _out(x.copy() if x.ndim else x)


@dataclass(frozen=True)
class ValidationReport:
    positivity_ok: bool
    monotone_ok: bool
    rate_theorem_ok: bool
    max_moment_order: float

    def messages(self) -> list[str]:
        out = []
        if not self.monotone_ok:
            out.append("alpha <= 1.5*beta^2: monotonicity conditions do not hold")
        if not self.rate_theorem_ok:
            out.append("alpha < 2.5*beta^2: order-one strong rate is not guaranteed")
        return out


def validate_params(p: ModelParams, warn: bool = False) -> ValidationReport:
    """Check ``p`` against the hypotheses of the analysis.

    Positivity of the scheme needs nothing beyond positive coefficients, so
    the other flags are advisory: with ``warn=True`` a ``ParameterWarning``
    is emitted for each failed hypothesis, but nothing is refused.
    """
    if not isinstance(p, ModelParams):
        raise TypeError("expected ModelParams")
    # ModelParams already rejects nonpositive fields at construction
    b2 = p.beta**2
    report = ValidationReport(
        positivity_ok=True,
        monotone_ok=p.alpha > 1.5 * b2,
        rate_theorem_ok=p.alpha >= 2.5 * b2,
        max_moment_order=1.0 + 2.0 * p.alpha / b2,
    )
    if warn:
        for msg in report.messages():
            warnings.warn(msg, ParameterWarning, stacklevel=2)
    return report
