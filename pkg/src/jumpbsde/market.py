"""Market coefficients, portfolio constraints, and price/wealth stepping.

Coefficients are deterministic functions of time (piecewise constant between
explicit breakpoints, or plain constants).  The single risky asset follows a
multiplicative update per step

    S -> S * (1 + b dt + sigma dW + beta_j * 1{jump j} - dt * sum_j w_j beta_j)

where the last term compensates the (truncated) jump part, and a
self-financing position pi earns ``pi * dS / S``.  Zero interest rate
throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AdmissibilityError,
    ParameterError,
    ShapeError,
    SingularCoefficientError,
    StepSizeError,
)
from .levy import JumpGrid


class Coefficient:
    """Piecewise-constant function of time on [0, T].

    ``values[i]`` applies on ``[breakpoints[i], breakpoints[i+1])``; the last
    value extends to the horizon.  A bare number is a constant coefficient.
    """

    def __init__(self, values, breakpoints=None):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if values.ndim != 1 or values.size == 0:
            raise ParameterError("coefficient table needs at least one value")
        if breakpoints is None:
            if values.size != 1:
                raise ParameterError("a coefficient table needs explicit breakpoints")
            breakpoints = np.zeros(1)
        breakpoints = np.atleast_1d(np.asarray(breakpoints, dtype=float))
        if breakpoints.shape != values.shape:
            raise ShapeError("breakpoints and values must align")
        if breakpoints[0] != 0.0 or np.any(np.diff(breakpoints) <= 0.0):
            raise ParameterError("breakpoints must start at 0 and increase strictly")
        if not np.all(np.isfinite(values)):
            raise ParameterError("coefficient values must be finite")
        self.values = values
        self.breakpoints = breakpoints

    @property
    def is_constant(self) -> bool:
        return self.values.size == 1

    def __call__(self, t: float) -> float:
        idx = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return float(self.values[max(idx, 0)])

    @staticmethod
    def make(spec) -> "Coefficient":
        """Coerce a number, a Coefficient, or a {breakpoints, values} mapping."""
        if isinstance(spec, Coefficient):
            return spec
        if isinstance(spec, dict):
            return Coefficient(spec["values"], spec.get("breakpoints"))
        return Coefficient([float(spec)])


@dataclass(frozen=True)
class ConstraintSet:
    """Closed position interval [lo, hi]; compact and containing 0."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ParameterError("constraint interval must be bounded")
        if self.lo > self.hi:
            raise ParameterError(f"constraint.lo ({self.lo}) exceeds constraint.hi ({self.hi})")
        if self.lo > 0.0 or self.hi < 0.0:
            raise ParameterError("constraint interval must contain 0")

    def contains(self, pi) -> bool:
        pi = np.asarray(pi, dtype=float)
        return bool(np.all(pi >= self.lo - 1e-12) and np.all(pi <= self.hi + 1e-12))

    def clip(self, pi):
        return np.clip(pi, self.lo, self.hi)

    @property
    def radius(self) -> float:
        return max(abs(self.lo), abs(self.hi))


@dataclass
class MarketSpec:
    """Drift/volatility/jump coefficients plus the risk parameters.

    ``beta`` holds one coefficient per grid atom.  Invariants (sigma never
    zero, every beta > -1, boundedness) are checked on a time grid at
    construction; they are what keep the price strictly positive and the
    market price of risk bounded.
    """

    b: Coefficient
    sigma: Coefficient
    beta: list
    grid: JumpGrid
    alpha: float
    T: float
    constraint: ConstraintSet

    def __post_init__(self):
        self.b = Coefficient.make(self.b)
        self.sigma = Coefficient.make(self.sigma)
        if np.isscalar(self.beta) or isinstance(self.beta, (int, float)):
            self.beta = [Coefficient.make(self.beta) for _ in range(self.grid.n_atoms)]
        else:
            self.beta = [Coefficient.make(c) for c in self.beta]
        if len(self.beta) != self.grid.n_atoms:
            raise ShapeError(
                f"{len(self.beta)} beta coefficients for {self.grid.n_atoms} atoms"
            )
        if not (self.alpha > 0.0):
            raise ParameterError(f"risk aversion alpha must be positive, got {self.alpha}")
        if not (self.T > 0.0):
            raise ParameterError(f"horizon T must be positive, got {self.T}")
        for t in self._check_times():
            if self.sigma(t) == 0.0:
                raise SingularCoefficientError(f"sigma({t}) = 0")
            for j, c in enumerate(self.beta):
                if c(t) <= -1.0:
                    raise ParameterError(f"beta_{j}({t}) = {c(t)} <= -1")

    def _check_times(self, n: int = 64) -> np.ndarray:
        ts = [np.linspace(0.0, self.T, n)]
        for c in [self.b, self.sigma, *self.beta]:
            ts.append(c.breakpoints)
        return np.unique(np.concatenate(ts).clip(0.0, self.T))

    @property
    def is_constant(self) -> bool:
        return all(c.is_constant for c in [self.b, self.sigma, *self.beta])

    def beta_at(self, t: float) -> np.ndarray:
        return np.array([c(t) for c in self.beta])

    def theta_bound(self) -> float:
        """max |b| / min |sigma| over the check grid, a bound for |theta|."""
        ts = self._check_times()
        bs = np.array([abs(self.b(t)) for t in ts])
        ss = np.array([abs(self.sigma(t)) for t in ts])
        return float(bs.max() / ss.min())

    def beta_bound(self) -> float:
        if self.grid.n_atoms == 0:
            return 0.0
        ts = self._check_times()
        return float(max(abs(c(t)) for c in self.beta for t in ts))


def theta(spec: MarketSpec, t: float) -> float:
    """Market price of risk b(t) / sigma(t)."""
    s = spec.sigma(t)
    if s == 0.0:
        raise SingularCoefficientError(f"sigma({t}) = 0")
    return spec.b(t) / s


def _increment(spec: MarketSpec, t: float, dt: float, dW: float,
               jump: int | None, grid_m: JumpGrid | None) -> float:
    """Compensated relative price increment dS / S_- over one step."""
    grid_m = spec.grid if grid_m is None else grid_m
    beta_t = spec.beta_at(t)
    inc = spec.b(t) * dt + spec.sigma(t) * dW
    if grid_m.n_atoms:
        # compensator of the truncated jump part, evaluated on grid_m atoms
        mask = np.isin(spec.grid.x, grid_m.x)
        inc -= dt * float(np.sum(grid_m.w * beta_t[mask]))
        if jump is not None:
            inc += float(beta_t[mask][jump])
    elif jump is not None:
        raise ShapeError("jump index supplied but the truncated grid is empty")
    return inc


def step_price(spec: MarketSpec, s_prev: float, t: float, dt: float, dW: float,
               jump: int | None = None, grid_m: JumpGrid | None = None) -> float:
    """One multiplicative price step; fails loudly if the factor is not positive."""
    if s_prev <= 0.0:
        raise ParameterError(f"price must be positive, got {s_prev}")
    if dt <= 0.0:
        raise ParameterError(f"dt must be positive, got {dt}")
    factor = 1.0 + _increment(spec, t, dt, dW, jump, grid_m)
    if factor <= 0.0:
        raise StepSizeError(f"price factor {factor} <= 0: dt too large")
    return s_prev * factor


def step_wealth(spec: MarketSpec, x_prev: float, pi: float, t: float, dt: float,
                dW: float, jump: int | None = None,
                grid_m: JumpGrid | None = None) -> float:
    """Self-financing wealth step ``x + pi * dS/S_-`` (linear in pi)."""
    if not spec.constraint.contains(pi):
        raise AdmissibilityError(
            f"pi = {pi} outside [{spec.constraint.lo}, {spec.constraint.hi}]"
        )
    return x_prev + pi * _increment(spec, t, dt, dW, jump, grid_m)


def validate_step_size(spec: MarketSpec, n_steps: int) -> None:
    """Reject step sizes that can produce nonpositive price factors.

    Checks, on the coefficient grid, that dt*(|b| + mass*max|beta|) < 1 and
    that the binomial increments +-sqrt(dt) keep the worst-case factor
    positive.  Raises with the smallest admissible n_steps instead of
    clamping.
    """
    dt = spec.T / n_steps
    mass = spec.grid.mass
    for t in spec._check_times():
        bt, st = spec.b(t), spec.sigma(t)
        beta_t = spec.beta_at(t)
        drift = abs(bt) + mass * (float(np.max(np.abs(beta_t))) if beta_t.size else 0.0)
        if dt * drift >= 1.0:
            raise StepSizeError(
                "dt * (|b| + jump mass * max|beta|) >= 1",
                suggested_n_steps=int(np.ceil(spec.T * drift)) + 1,
            )
        comp = dt * float(np.sum(spec.grid.w * beta_t)) if beta_t.size else 0.0
        for dW in (np.sqrt(dt), -np.sqrt(dt)):
            base = 1.0 + bt * dt + st * dW - comp
            worst = base + (float(np.min(beta_t)) if beta_t.size else 0.0)
            if base <= 0.0 or worst <= 0.0:
                # factor positivity degrades like sqrt(dt): quadruple the count
                raise StepSizeError(
                    "price factor can reach <= 0 at this step size",
                    suggested_n_steps=4 * n_steps,
                )
