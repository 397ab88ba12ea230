"""Command-line front end.

    hestonmlmc price      [--epsilon E]   MLMC price of the configured payoff
    hestonmlmc converge                   strong error against a fine reference
    hestonmlmc variance                   per-level variance decay
    hestonmlmc complexity                 MLMC cost against accuracy
    hestonmlmc monotone                   monotonicity-inequality diagnostic

Settings come from built-in defaults, then a ``key = value`` config file
(``--config``), then command-line flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__
from .analysis import (
    complexity_study,
    check_monotonicity,
    derive_monotonicity_constants,
    monotonicity_grid,
    mse_vs_reference,
    variance_decay_study,
)
from .mlmc import EPSILON_MAX, MlmcConfig, MlmcNotConverged, run_mlmc
from .model import ModelParams, Payoff, validate_params
from .scheme import rate_step_limit

logger = logging.getLogger("hestonmlmc")

OUT_ENV = "HESTONMLMC_OUT"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2


class ConfigError(ValueError):
    pass


def _default_out():
    return os.environ.get(OUT_ENV, "results")


@dataclass
class RunConfig:
    mu: float = 1.0
    alpha: float = 2.5
    beta: float = 1.0
    x0: float = 1.0
    t_end: float = 1.0
    payoff: str = "call"
    strike: float = 0.05
    epsilon: float = 0.02
    epsilons: tuple = (0.05, 0.02, 0.01, 0.005)
    l_min: int = 0
    l_max: int = 16
    initial_samples: int = 100
    chi: float = 1.0
    conv_samples: int = 5000
    conv_steps: tuple = (16, 32, 64, 128, 256, 512)
    ref_steps: int = 4096
    var_samples: int = 100_000
    var_levels: tuple = tuple(range(1, 11))
    mono_samples: int = 100_000
    mono_rho: float | None = None
    seed: int = 0
    out: str = dataclasses.field(default_factory=_default_out)
    workers: int = 1

    def __post_init__(self):
        try:
            self.params()
            self.phi()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for name in ("conv_samples", "ref_steps", "var_samples", "mono_samples", "initial_samples", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.initial_samples < 2 or self.var_samples < 2:
            raise ConfigError("initial_samples and var_samples must be >= 2")
        for eps in (self.epsilon, *self.epsilons):
            if not 0 < eps < EPSILON_MAX:
                raise ConfigError(f"epsilon {eps} must lie in (0, e^-1) = (0, {EPSILON_MAX:.6f})")
        if not 0 <= self.l_min <= self.l_max:
            raise ConfigError("need 0 <= l_min <= l_max")
        if not self.conv_steps or any(n < 1 or self.ref_steps % n for n in self.conv_steps):
            raise ConfigError("every conv_steps entry must be positive and divide ref_steps")
        if not self.var_levels or any(l < 1 for l in self.var_levels):
            raise ConfigError("var_levels must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")

    def params(self) -> ModelParams:
        return ModelParams(self.mu, self.alpha, self.beta, self.x0, self.t_end)

    def phi(self) -> Payoff:
        if self.payoff not in ("call", "identity"):
            raise ValueError(f"payoff must be 'call' or 'identity', got {self.payoff!r}")
        return Payoff.call(self.strike) if self.payoff == "call" else Payoff.identity()

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {
    "mu": float, "alpha": float, "beta": float, "x0": float, "t_end": float,
    "payoff": str, "strike": float, "epsilon": float, "epsilons": (float,),
    "l_min": int, "l_max": int, "initial_samples": int, "chi": float,
    "conv_samples": int, "conv_steps": (int,), "ref_steps": int,
    "var_samples": int, "var_levels": (int,), "mono_samples": int,
    "mono_rho": float | None, "seed": int, "out": str, "workers": int,
}


def _format_value(v):
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_int(s):
    s = s.strip()
    try:
        return int(s)
    except ValueError:
        f = float(s)
        if not f.is_integer():
            raise
        return int(f)


def _parse_value(key, text):
    kind = _FIELD_TYPES[key]
    text = text.strip()
    if kind is str:
        return text
    if kind == (float | None):
        return None if text == "" else float(text)
    if isinstance(kind, tuple):
        item = _parse_int if kind[0] is int else float
        parts = [t for t in text.split(",") if t.strip()]
        return tuple(item(t) for t in parts)
    return _parse_int(text) if kind is int else float(text)


def _build(values: dict) -> RunConfig:
    for key in ("mu", "alpha", "beta", "x0", "t_end", "strike", "epsilon", "chi"):
        if key in values and not math.isfinite(values[key]):
            raise ConfigError(f"{key} must be finite")
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _parse_pairs(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    return values


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment); missing keys keep their defaults."""
    return _build(_parse_pairs(text))


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return f"{float(v):.17g}"


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_meta(out: Path, command, cfg: RunConfig, wall, total_cost, extra=()):
    lines = [
        f"command = {command}",
        f"version = {__version__}",
        f"seed = {cfg.seed}",
        f"wall_time_s = {wall:.3f}",
        f"total_cost = {total_cost}",
    ]
    lines += [f"{k} = {v}" for k, v in extra]
    lines += ["", "# config", cfg.to_text()]
    (out / "meta.txt").write_text("\n".join(lines))


# ---------------------------------------------------------------- commands


def cmd_price(cfg: RunConfig, out: Path):
    mcfg = MlmcConfig(cfg.epsilon, l_min=cfg.l_min, l_max=cfg.l_max, initial_samples=cfg.initial_samples,
                      chi=cfg.chi, seed=cfg.seed, workers=cfg.workers)
    code = EXIT_OK
    try:
        res = run_mlmc(cfg.params(), cfg.phi(), mcfg)
    except MlmcNotConverged as exc:
        logger.error("%s", exc)
        res = exc.result
        code = EXIT_NOT_CONVERGED
    write_csv(out / "price.csv", ["estimate", "bias_estimate", "stat_error", "total_cost"],
              [(res.estimate, res.bias_estimate, res.statistical_error_estimate, res.total_cost)])
    write_csv(out / "price_levels.csv", ["level", "n_samples", "mean_diff", "var_diff", "cost"],
              [(s.level, s.n_samples, s.mean_diff, s.var_diff, s.n_samples * s.cost_per_sample)
               for s in res.levels])
    print(f"estimate      {res.estimate:.10g}")
    print(f"bias estimate {res.bias_estimate:.3g}  (limit {cfg.epsilon / math.sqrt(2):.3g})")
    print(f"stat error    {res.statistical_error_estimate:.3g}  (limit {cfg.epsilon / math.sqrt(2):.3g})")
    print(f"levels        {res.levels[0].level}..{res.levels[-1].level}")
    print(f"total cost    {res.total_cost} steps")
    return code, res.total_cost, [("converged", res.converged)]


def cmd_converge(cfg: RunConfig, out: Path):
    rep = mse_vs_reference(cfg.params(), cfg.conv_samples, cfg.conv_steps, cfg.ref_steps, cfg.seed,
                           workers=cfg.workers)
    write_csv(out / "convergence.csv", ["h", "rms_error"], zip(rep.step_sizes, rep.rms_errors))
    for h, e in zip(rep.step_sizes, rep.rms_errors):
        print(f"h = {h:<12.6g} rms error = {e:.6g}")
    print(f"fitted slope  {rep.fitted_slope:.4f}")
    cost = cfg.conv_samples * (cfg.ref_steps + sum(cfg.conv_steps))
    return EXIT_OK, cost, [("fitted_slope", _fmt(rep.fitted_slope))]


def cmd_variance(cfg: RunConfig, out: Path):
    study = variance_decay_study(cfg.params(), cfg.phi(), cfg.var_levels, cfg.var_samples, cfg.seed,
                                 workers=cfg.workers)
    write_csv(out / "variance.csv", ["level", "h", "var_diff", "var_fine", "mean_diff"],
              [(r.level, r.h, r.var_diff, r.var_fine, r.mean_diff) for r in study.rows])
    for r in study.rows:
        print(f"level {r.level:>2}  log2 var_diff {math.log2(r.var_diff):8.3f}  log2 var_fine {math.log2(r.var_fine):8.3f}")
    print(f"slope (diff)  {study.slope_diff:.4f}")
    print(f"slope (fine)  {study.slope_fine:.4f}")
    cost = cfg.var_samples * sum(2**l + 2 ** (l - 1) for l in cfg.var_levels)
    return EXIT_OK, cost, [("slope_diff", _fmt(study.slope_diff)), ("slope_fine", _fmt(study.slope_fine))]


def cmd_complexity(cfg: RunConfig, out: Path):
    try:
        study = complexity_study(cfg.params(), cfg.phi(), cfg.epsilons, cfg.seed, workers=cfg.workers,
                                 l_min=cfg.l_min, l_max=cfg.l_max, initial_samples=cfg.initial_samples,
                                 chi=cfg.chi)
    except MlmcNotConverged as exc:
        logger.error("%s", exc)
        return EXIT_NOT_CONVERGED, exc.result.total_cost, []
    write_csv(out / "complexity.csv", ["epsilon", "total_cost", "levels_used", "estimate"],
              [(r.epsilon, r.total_cost, r.levels_used, r.estimate) for r in study.rows])
    for r, sc in zip(study.rows, study.scaled_costs):
        print(f"eps = {r.epsilon:<8g} cost = {r.total_cost:<12d} cost*eps^2 = {sc:.4g}")
    print(f"fitted slope  {study.slope:.4f}")
    return EXIT_OK, sum(r.total_cost for r in study.rows), [("fitted_slope", _fmt(study.slope))]


def cmd_monotone(cfg: RunConfig, out: Path):
    p = cfg.params()
    try:
        consts = derive_monotonicity_constants(p, rho=cfg.mono_rho)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    x, y, h = monotonicity_grid(cfg.mono_samples, p.t_end, cfg.seed)
    rep = check_monotonicity(p, consts, x, y, h)
    write_csv(out / "monotonicity.csv",
              ["q", "rho", "theta_restrict", "l0", "l1", "c_tilde", "n_triples",
               "violations_first", "violations_second", "max_excess_first", "max_excess_second"],
              [(consts.q, consts.rho, consts.theta_restrict, consts.l0, consts.l1, consts.c_tilde,
                rep.n_triples, len(rep.first_violations), len(rep.second_violations),
                rep.max_excess_first, rep.max_excess_second)])
    print(f"L0 = {consts.l0:.6g}  L1 = {consts.l1:.6g}  q = {consts.q:.6g}  rho = {consts.rho:.6g}")
    print(f"violations: first {len(rep.first_violations)}, second {len(rep.second_violations)} "
          f"of {rep.n_triples} triples")
    return EXIT_OK, 0, [("violations", len(rep.first_violations) + len(rep.second_violations))]


COMMANDS = {
    "price": cmd_price,
    "converge": cmd_converge,
    "variance": cmd_variance,
    "complexity": cmd_complexity,
    "monotone": cmd_monotone,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./results)")
    common.add_argument("--workers", type=int)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; may be repeated")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hestonmlmc", description="Positivity-preserving Milstein MLMC "
                                     "for the Heston 3/2-model.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    price = sub.add_parser("price", parents=[common], help="MLMC estimate of E[phi(X(T))]")
    price.add_argument("--epsilon", type=float)
    sub.add_parser("converge", parents=[common], help="strong convergence study")
    sub.add_parser("variance", parents=[common], help="level variance study")
    complexity = sub.add_parser("complexity", parents=[common], help="cost against accuracy")
    complexity.add_argument("--epsilons", help="comma-separated accuracies")
    sub.add_parser("monotone", parents=[common], help="monotonicity diagnostic")
    return parser


def resolve_config(args) -> RunConfig:
    values = {}
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        values.update(_parse_pairs(text))
    overrides = "\n".join(args.set)
    if getattr(args, "epsilons", None):
        overrides += f"\nepsilons = {args.epsilons}"
    values.update(_parse_pairs(overrides))
    for key in ("seed", "out", "workers", "epsilon"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return _build(values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    p = cfg.params()
    for msg in validate_params(p).messages():
        print(f"warning: {msg}", file=sys.stderr)
    if p.t_end / 2**cfg.l_min > rate_step_limit(p):
        logger.info("coarsest step exceeds theta/mu; positivity holds, the rate result does not apply there")

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            code, total_cost, extra = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_meta(out, args.command, cfg, time.perf_counter() - started, total_cost, extra)
    return code


if __name__ == "__main__":
    sys.exit(main())
