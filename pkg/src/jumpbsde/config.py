"""Run configuration: schema, validation, and object builders.

A run is described by one JSON document.  Validation failures surface as
:class:`ConfigError` carrying a JSON-pointer-style path to the offending
field, so callers can report "market.constraint.lo" rather than a stack
trace.
"""

from __future__ import annotations

from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import lattice as lattice_mod
from .errors import ConfigError
from .levy import JumpGrid
from .market import Coefficient, ConstraintSet, MarketSpec, validate_step_size

CoefficientSpec = Union[float, dict]


class GridAtom(BaseModel):
    model_config = ConfigDict(extra="forbid")
    x: float
    w: float

    @model_validator(mode="after")
    def _check(self):
        if self.x == 0.0:
            raise ValueError("grid.x must be nonzero")
        if self.w < 0.0:
            raise ValueError("grid.w must be nonnegative")
        return self


class ConstraintBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    lo: float
    hi: float

    @model_validator(mode="after")
    def _check(self):
        if self.lo > self.hi:
            raise ValueError("constraint.lo exceeds constraint.hi")
        if self.lo > 0.0 or self.hi < 0.0:
            raise ValueError("constraint interval must contain 0")
        return self


class MarketBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    b: CoefficientSpec
    sigma: CoefficientSpec
    beta: Union[float, list] = Field(default_factory=list)
    grid: list[GridAtom] = Field(default_factory=list)
    alpha: float
    T: float
    constraint: ConstraintBlock

    @model_validator(mode="after")
    def _check(self):
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.T <= 0.0:
            raise ValueError("T must be positive")
        return self


class LatticeBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    n_steps: int = Field(ge=1)
    mode: Literal["tree", "markov"] = "tree"


class TerminalBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["constant", "call", "table"]
    params: dict = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "constant" and "value" not in self.params:
            raise ValueError("terminal.params.value required for kind=constant")
        if self.kind == "call":
            for key in ("strike", "s0"):
                if key not in self.params:
                    raise ValueError(f"terminal.params.{key} required for kind=call")
        if self.kind == "table" and "values" not in self.params:
            raise ValueError("terminal.params.values required for kind=table")
        return self


class SolverBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    picard_tol: float = Field(default=1e-10, gt=0.0)
    max_iter: int = Field(default=200, ge=1)


class CascadeBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    m_schedule: Optional[list[Optional[int]]] = None
    N_override: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.m_schedule is not None:
            if not self.m_schedule:
                raise ValueError("cascade.m_schedule must be nonempty")
            levels = [m for m in self.m_schedule if m is not None]
            if any(m < 1 for m in levels):
                raise ValueError("cascade.m_schedule levels must be >= 1 or null")
            if any(a >= b for a, b in zip(levels, levels[1:])):
                raise ValueError("cascade.m_schedule must be strictly increasing")
            if None in self.m_schedule and self.m_schedule[-1] is not None:
                raise ValueError("cascade.m_schedule null (no truncation) must be last")
        return self


class McBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    paths: int = Field(ge=2)
    seed: int
    strategies: int = Field(default=20, ge=0)


class OptimizeBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    x: float = 0.0


class ValidateBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    seed: int = 20250810
    comparison_pairs: int = Field(default=4, ge=0)


class OutputBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    dir: str = "out"
    formats: list[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    market: MarketBlock
    lattice: LatticeBlock
    terminal: TerminalBlock
    solver: SolverBlock = Field(default_factory=SolverBlock)
    cascade: CascadeBlock = Field(default_factory=CascadeBlock)
    mc: Optional[McBlock] = None
    optimize: OptimizeBlock = Field(default_factory=OptimizeBlock)
    validation: ValidateBlock = Field(default_factory=ValidateBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)


def _pointer(loc: tuple) -> str:
    return ".".join(str(part) for part in loc)


def parse_config(data: dict) -> RunConfig:
    """Validate a raw mapping into a RunConfig; ConfigError names the field."""
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first["msg"], _pointer(first["loc"])) from exc


def build_market(cfg: RunConfig) -> MarketSpec:
    grid = JumpGrid(x=np.array([a.x for a in cfg.market.grid]),
                    w=np.array([a.w for a in cfg.market.grid]))
    beta = cfg.market.beta
    if isinstance(beta, list) and not beta and grid.n_atoms:
        raise ConfigError("beta required when the grid has atoms", "market.beta")
    try:
        return MarketSpec(
            b=Coefficient.make(cfg.market.b),
            sigma=Coefficient.make(cfg.market.sigma),
            beta=beta if not isinstance(beta, float) else float(beta),
            grid=grid,
            alpha=cfg.market.alpha,
            T=cfg.market.T,
            constraint=ConstraintSet(cfg.market.constraint.lo, cfg.market.constraint.hi),
        )
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc), "market") from exc


def build_lattice(cfg: RunConfig, market: MarketSpec):
    if cfg.lattice.mode == "tree" and cfg.lattice.n_steps > lattice_mod.MAX_TREE_STEPS:
        raise ConfigError(
            f"tree mode is capped at {lattice_mod.MAX_TREE_STEPS} steps; "
            "use markov mode", "lattice.n_steps")
    if cfg.lattice.mode == "markov" and not market.is_constant:
        raise ConfigError("markov mode requires constant coefficients",
                          "lattice.mode")
    validate_step_size(market, cfg.lattice.n_steps)
    return lattice_mod.build(cfg.lattice.n_steps, market.grid, market.T,
                             mode=cfg.lattice.mode)


def terminal_prices(market: MarketSpec, lat, s0: float) -> np.ndarray:
    """Terminal price per node: s0 times the product of step factors."""
    def log_factors(i):
        t = float(lat.times[i])
        beta_t = market.beta_at(t)
        comp = lat.dt * float(np.sum(lat.grid.w * beta_t)) if beta_t.size else 0.0
        inc = market.b(t) * lat.dt + market.sigma(t) * lat.branch_dw - comp
        if beta_t.size:
            inc = inc + np.where(lat.branch_jump >= 0,
                                 beta_t[np.maximum(lat.branch_jump, 0)], 0.0)
        factors = 1.0 + inc
        if np.any(factors <= 0.0):
            raise ConfigError("price factor <= 0 on some branch; refine n_steps",
                              "lattice.n_steps")
        return np.log(factors)

    return s0 * np.exp(lat.forward_values(log_factors)[lat.n_steps])


def terminal_values(cfg: RunConfig, market: MarketSpec, lat) -> np.ndarray:
    """Liability values B_bar on the terminal slice."""
    params = cfg.terminal.params
    size = lat.slice_size(lat.n_steps)
    if cfg.terminal.kind == "constant":
        return np.full(size, float(params["value"]))
    if cfg.terminal.kind == "call":
        s_T = terminal_prices(market, lat, float(params["s0"]))
        payoff = np.maximum(s_T - float(params["strike"]), 0.0)
        cap = params.get("cap")
        return payoff if cap is None else np.minimum(payoff, float(cap))
    values = np.asarray(params["values"], dtype=float)
    if values.shape != (size,):
        raise ConfigError(
            f"terminal.params.values has {values.size} entries, "
            f"lattice terminal slice has {size}", "terminal.params.values")
    return values
