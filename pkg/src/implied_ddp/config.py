"""Flat ``key = value`` run configuration.

Blank lines and lines starting with ``#`` are ignored. Unknown keys are
errors. Lists (``delta_grid``, ``thresholds``) are comma separated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .ddp_sampler import ChainConfig, Priors
from .volatility import DEFAULT_DELTA_GRID


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text):
    t = text.strip().lower()
    return None if t in ("", "none") else float(t)


@dataclass(frozen=True)
class RunConfig:
    quotes: str | None = None
    calendar: str | None = None
    panel: str | None = None
    out: str = "out"
    burn_in: int = 5000
    kept: int = 20000
    thin: int = 1
    seed: int = 0
    chains: int = 1
    store_atoms: bool = True
    assignment: str = "collapsed"
    tail_swaps: bool = True
    prior_preset: str = "data_location"
    mu_mean: float | None = None
    mu_var: float | None = None
    a_U: float = 2.0
    b_U: float = 1.0
    a_alpha: float = 1.0
    b_alpha: float = 1.0
    alpha_fixed: float | None = None
    s0: float = 1.0
    S0: float = 10.0
    rho_grid_size: int = 399
    delta_grid: tuple = DEFAULT_DELTA_GRID
    grid_size: int = 512
    thresholds: tuple = (-15.0,)
    horizon: int = 1
    sim_T: int = 306
    sim_max_count: int = 26
    sim_mean_count: float = 4385 / 306
    sim_mu: float = -7.0
    sim_rho: float = 0.95
    sim_U: float = 0.5
    sim_delta: float = 0.95
    sim_alpha: float = 1.0
    sim_s0: float = 20.0
    sim_S0: float = 4.0
    geweke_iterations: int = 50_000
    crp_sweeps: int = 50_000

    def __post_init__(self):
        if self.burn_in < 0 or self.kept <= 0 or self.thin < 1:
            raise ConfigError("need burn_in >= 0, kept > 0 and thin >= 1")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not all(math.isfinite(c) for c in self.thresholds):
            raise ConfigError("thresholds must be finite")
        if self.assignment not in ("collapsed", "conditional"):
            raise ConfigError("assignment must be 'collapsed' or 'conditional'")
        if self.horizon < 0 or self.grid_size < 2:
            raise ConfigError("horizon must be >= 0 and grid_size >= 2")
        try:
            self.priors()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def priors(self) -> Priors:
        over = dict(a_U=self.a_U, b_U=self.b_U, a_alpha=self.a_alpha, b_alpha=self.b_alpha, s0=self.s0,
                    S0=self.S0, rho_grid_size=self.rho_grid_size, delta_grid=self.delta_grid,
                    alpha_fixed=self.alpha_fixed)
        if self.mu_mean is not None:
            over["mu_mean"] = self.mu_mean
        if self.mu_var is not None:
            over["mu_var"] = self.mu_var
        return Priors.preset(self.prior_preset, **over)

    def chain_config(self) -> ChainConfig:
        return ChainConfig(self.burn_in, self.kept, self.thin, self.store_atoms)

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _parser_for(f):
    t = f.type
    if t == "str | None":
        return lambda s: s.strip() or None
    if t == "str":
        return str.strip
    if t == "int":
        return int
    if t == "float":
        return float
    if t == "bool":
        return _bool
    if t == "float | None":
        return _optional_float
    if t == "tuple":
        return _floats
    raise TypeError(t)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def parse_config(text: str, source="<config>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected key = value")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in _FIELDS:
            raise ConfigError(f"{source}: line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}: line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _parser_for(_FIELDS[key])(value)
        except ValueError as exc:
            raise ConfigError(f"{source}: line {lineno}: bad value for {key}: {exc}") from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    try:
        return replace(cfg, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name, value in cfg.echo().items():
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(repr(float(v)) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
