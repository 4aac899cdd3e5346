"""The generator family of the quadratic jump BSDE.

The base driver is

    f(t, z, u) = inf_{pi in C} [ (a/2)|pi*sigma - (z + theta/a)|^2
                                 + |u - pi*beta|_a ]  -  theta*z - theta^2/(2a)

with ``|.|_a`` the exponential jump functional from :mod:`jumpbsde.levy`.
Around it live the shifted driver f~(t,z,u) = f(t, z - theta/a, u) - f(t,
-theta/a, 0) (normalized so f~(t,0,0) = 0), the Lipschitz truncations f^m
(quadratic term cut beyond |z| = m, jump integral restricted to atoms with
|x| >= 1/m and capped in u), and the re-anchored stage drivers f^{k,m} used
by the terminal-splitting construction.

All evaluations are pure.  The inner minimization is convex (a quadratic
plus nonnegatively weighted convex terms of affine arguments), so a golden
section bracket on the compact constraint interval is exact up to its
tolerance; the slice evaluators vectorize it across lattice nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError, ShapeError
from .levy import g_alpha, g_alpha_prime, truncation_mask
from .market import ConstraintSet, MarketSpec, theta as theta_of

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

DEFAULT_MIN_TOL = 1e-9


def smoothstep_cut(y, level):
    """C^1 cubic cutoff: 1 on |y| <= level, 0 on |y| >= level + 1.

    In between, ``1 - 3 s^2 + 2 s^3`` with s = |y| - level; the derivative
    bound is 1.5.  ``level=None`` disables the cut entirely.
    """
    y = np.asarray(y, dtype=float)
    if level is None:
        return np.ones_like(y)
    if level < 0:
        raise ParameterError(f"cut level must be nonnegative, got {level}")
    s = np.clip(np.abs(y) - float(level), 0.0, 1.0)
    return 1.0 - s * s * (3.0 - 2.0 * s)


def _golden_section_vec(fun, lo: float, hi: float, tol: float):
    """Vectorized golden-section minimum of per-node convex objectives.

    ``fun`` maps an array of candidate positions (one per node) to the array
    of objective values.  Returns (argmin, value) arrays; the bracket around
    each true minimizer has final width <= tol.
    """
    width = hi - lo
    if width <= tol:
        probe = fun(np.atleast_1d(np.asarray(0.5 * (lo + hi), dtype=float)))
        mid = np.full(probe.shape, 0.5 * (lo + hi))
        return mid, probe.copy()
    n_iter = max(0, int(math.ceil(math.log(tol / width) / math.log(_INV_PHI))))
    h = width
    # a scalar start broadcasts against the per-node data inside fun
    yc = fun(np.atleast_1d(np.asarray(hi - _INV_PHI * h, dtype=float)))
    shape = yc.shape
    a = np.full(shape, lo)
    b = np.full(shape, hi)
    c = b - _INV_PHI * h
    d = a + _INV_PHI * h
    yc = np.broadcast_to(yc, shape).copy()
    yd = fun(d)
    for _ in range(n_iter):
        left = yc < yd
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        h *= _INV_PHI
        c = b - _INV_PHI * h
        d = a + _INV_PHI * h
        # one interior value survives the shrink: old c as new d on the left
        # branch, old d as new c on the right branch
        fresh = np.where(left, c, d)
        y_new = fun(fresh)
        yc_old = yc
        yc = np.where(left, y_new, yd)
        yd = np.where(left, yc_old, y_new)
    pi = 0.5 * (a + b)
    val = fun(pi)
    # boundary minima: the bracket midpoint misses them at first order in
    # tol, the endpoints hit them exactly
    for edge in (lo, hi):
        edge_arr = np.full(shape, edge)
        y_edge = fun(edge_arr)
        better = y_edge < val
        pi = np.where(better, edge_arr, pi)
        val = np.where(better, y_edge, val)
    return pi, val


def _golden_section_scalar(obj, lo: float, hi: float, tol: float):
    """Scalar golden-section twin of the vectorized search."""
    h = hi - lo
    if h <= tol:
        mid = 0.5 * (lo + hi)
        return mid, obj(mid)
    n_iter = max(0, int(math.ceil(math.log(tol / h) / math.log(_INV_PHI))))
    a, b = lo, hi
    c = b - _INV_PHI * h
    d = a + _INV_PHI * h
    yc, yd = obj(c), obj(d)
    for _ in range(n_iter):
        h *= _INV_PHI
        if yc < yd:
            b, d, yd = d, c, yc
            c = b - _INV_PHI * h
            yc = obj(c)
        else:
            a, c, yc = c, d, yd
            d = a + _INV_PHI * h
            yd = obj(d)
    best_pi = 0.5 * (a + b)
    best = obj(best_pi)
    for edge in (lo, hi):
        y_edge = obj(edge)
        if y_edge < best:
            best_pi, best = edge, y_edge
    return best_pi, best


def minimize_over_C(objective, constraint: ConstraintSet,
                    tol: float = DEFAULT_MIN_TOL):
    """Minimize a convex scalar objective over the constraint interval.

    Returns ``(pi_star, value)`` with pi_star within tol of a true minimizer.
    """
    if not (tol > 0.0):
        raise ParameterError(f"tol must be positive, got {tol}")
    pi, val = _golden_section_scalar(lambda p: float(objective(p)),
                                     constraint.lo, constraint.hi, tol)
    return float(pi), float(val)


# --- market data frozen at one time point ---------------------------------


@dataclass(frozen=True)
class _At:
    alpha: float
    sigma: float
    theta: float
    b: float
    beta: np.ndarray   # (J,)
    w: np.ndarray      # (J,)
    lo: float
    hi: float


def _at(market: MarketSpec, t: float) -> _At:
    return _At(
        alpha=market.alpha,
        sigma=market.sigma(t),
        theta=theta_of(market, t),
        b=market.b(t),
        beta=market.beta_at(t),
        w=market.grid.w,
        lo=market.constraint.lo,
        hi=market.constraint.hi,
    )


def _inner_min(at: _At, z: np.ndarray, u: np.ndarray, m, m_cap,
               mask: np.ndarray, tol: float):
    """inf over pi of the truncated inner objective, vectorized over nodes.

    z: (S,), u: (S, J).  Returns (value (S,), pi (S,)).  With m=None all
    three truncations (quadratic cut rho_m, measure restriction, u-cap
    rho_M) are disabled and this is the exact inner term of f.
    """
    alpha = at.alpha
    q = z + at.theta / alpha
    rho_z = smoothstep_cut(z, m)
    w_eff = at.w[mask] * smoothstep_cut(u[:, mask], None if m is None else m_cap)
    beta_m = at.beta[mask]
    u_m = u[:, mask]

    jump_coupled = w_eff.size > 0 and bool(np.any((w_eff != 0.0) & (beta_m != 0.0)))
    if not jump_coupled:
        # jump term independent of pi: quadratic argmin projected onto C
        pi = np.clip(q / at.sigma, at.lo, at.hi)
        val = 0.5 * alpha * rho_z * (pi * at.sigma - q) ** 2
        if w_eff.size:
            val = val + np.sum(w_eff * g_alpha(alpha, u_m), axis=1)
        return val, pi

    if z.size == 1:
        # single-node fast path: pure-float golden section
        q0, rho0 = float(q[0]), float(rho_z[0])
        terms = [(float(we), float(bj), float(uj))
                 for we, bj, uj in zip(w_eff[0], beta_m, u_m[0])]
        half_a = 0.5 * alpha

        def obj_scalar(p):
            val = half_a * rho0 * (p * at.sigma - q0) ** 2
            for we, bj, uj in terms:
                y = alpha * (uj - p * bj)
                val += we * (math.expm1(y) - y) / alpha
            return val

        p0, v0 = _golden_section_scalar(obj_scalar, at.lo, at.hi, tol)
        return np.array([v0]), np.array([p0])

    def objective(pi):
        quad = 0.5 * alpha * rho_z * (pi * at.sigma - q) ** 2
        jump = np.sum(w_eff * g_alpha(alpha, u_m - pi[:, None] * beta_m[None, :]), axis=1)
        return quad + jump

    pi, val = _golden_section_vec(objective, at.lo, at.hi, tol)
    return val, pi


def _f_vec(at: _At, z, u, m, m_cap, mask, tol):
    val, pi = _inner_min(at, z, u, m, m_cap, mask, tol)
    return val - at.theta * z - at.theta ** 2 / (2.0 * at.alpha), pi


def _as_batch(market: MarketSpec, z, u):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[None, :] if z.size == 1 else np.broadcast_to(u, (z.size, u.size))
    if u.shape != (z.size, market.grid.n_atoms):
        raise ShapeError(
            f"u of shape {u.shape} misaligned with z batch {z.size} and "
            f"grid of {market.grid.n_atoms} atoms"
        )
    return z, u


# --- public scalar operations ---------------------------------------------


def f_eval(market: MarketSpec, t: float, z: float, u, *,
           return_argmin: bool = False, tol: float = DEFAULT_MIN_TOL):
    """The base driver f(t, z, u); optionally also the inner minimizer."""
    at = _at(market, t)
    zb, ub = _as_batch(market, z, u)
    mask = np.ones(market.grid.n_atoms, dtype=bool)
    val, pi = _f_vec(at, zb, ub, None, None, mask, tol)
    if return_argmin:
        return float(val[0]), float(pi[0])
    return float(val[0])


def f_tilde_eval(market: MarketSpec, t: float, z: float, u, *,
                 tol: float = DEFAULT_MIN_TOL) -> float:
    """Shifted, recentered driver: f(t, z - theta/a, u) - f(t, -theta/a, 0).

    The baseline is computed, never hardcoded, so f~(t, 0, 0) = 0 exactly.
    """
    at = _at(market, t)
    zb, ub = _as_batch(market, z, u)
    mask = np.ones(market.grid.n_atoms, dtype=bool)
    shift = at.theta / at.alpha
    val, _ = _f_vec(at, zb - shift, ub, None, None, mask, tol)
    base, _ = _f_vec(at, np.array([-shift]), np.zeros((1, market.grid.n_atoms)),
                     None, None, mask, tol)
    return float(val[0] - base[0])


def f_m_eval(market: MarketSpec, t: float, z: float, u, m: int,
             m_cap: float, *, tol: float = DEFAULT_MIN_TOL) -> float:
    """Truncated driver f^m: quadratic term times rho_m(z), jump integral
    against the |x| >= 1/m atoms with the u-cap weight rho_M(u)."""
    at = _at(market, t)
    zb, ub = _as_batch(market, z, u)
    mask = truncation_mask(market.grid, m)
    val, _ = _f_vec(at, zb, ub, m, m_cap, mask, tol)
    return float(val[0])


def f_1m_eval(market: MarketSpec, t: float, z: float, u, m: int,
              m_cap: float, *, tol: float = DEFAULT_MIN_TOL) -> float:
    """First-stage truncated driver: f^m(t, z - theta/a, u) - f(t, -theta/a, 0)."""
    at = _at(market, t)
    zb, ub = _as_batch(market, z, u)
    shift = at.theta / at.alpha
    mask = truncation_mask(market.grid, m)
    val, _ = _f_vec(at, zb - shift, ub, m, m_cap, mask, tol)
    full = np.ones(market.grid.n_atoms, dtype=bool)
    base, _ = _f_vec(at, np.array([-shift]), np.zeros((1, market.grid.n_atoms)),
                     None, None, full, tol)
    return float(val[0] - base[0])


def f_km_eval(market: MarketSpec, t: float, z: float, u, m, m_cap,
              anchor_z: float, anchor_u, *, tol: float = DEFAULT_MIN_TOL) -> float:
    """Stage-k driver re-anchored at the running sums of earlier stages:

        f^m(t, z + anchor_z - theta/a, u + anchor_u)
            - f^m(t, anchor_z - theta/a, anchor_u)

    With zero anchors this collapses to f^{1,m} (the two baselines agree
    because the inner infimum vanishes at pi = 0 in both).
    """
    if anchor_z is None or anchor_u is None:
        raise ConfigError("stage driver needs anchor processes", "generator.anchors")
    at = _at(market, t)
    zb, ub = _as_batch(market, z, u)
    anchor_u = np.asarray(anchor_u, dtype=float)
    if anchor_u.shape != (market.grid.n_atoms,):
        raise ShapeError("anchor_u misaligned with the grid")
    shift = float(anchor_z) - at.theta / at.alpha
    mask = truncation_mask(market.grid, m)
    val, _ = _f_vec(at, zb + shift, ub + anchor_u[None, :], m, m_cap, mask, tol)
    base, _ = _f_vec(at, np.array([shift]), anchor_u[None, :], m, m_cap, mask, tol)
    return float(val[0] - base[0])


def portfolio_argmin(market: MarketSpec, t: float, z, u, *,
                     tol: float = DEFAULT_MIN_TOL):
    """Minimizer and value of the untruncated inner objective

        (a/2) |pi sigma - (z + theta/a)|^2 + |u - pi beta|_a

    over the constraint interval, vectorized over nodes (z: (S,), u: (S,J)).
    This is the per-node portfolio optimizer.
    """
    at = _at(market, t)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[None, :]
    if u.shape != (z.size, market.grid.n_atoms):
        raise ShapeError("u misaligned with z batch and the grid")
    mask = np.ones(market.grid.n_atoms, dtype=bool)
    val, pi = _inner_min(at, z, u, None, None, mask, tol)
    return pi, val


def gamma_eval(market: MarketSpec, t: float, u, u_prime) -> np.ndarray:
    """Per-atom slopes of the driver's u-increments.

    For each atom the 0..1 average of g_a' along the segment from
    ``u'_j - pi*beta_j`` to ``u_j - pi*beta_j`` equals, in closed form, the
    difference quotient of g_a (or g_a' at the point when the segment is
    degenerate).  The quotient is monotone in the affine shift -pi*beta_j
    because g_a is convex, so the sup (when u_j >= u'_j) and inf (otherwise)
    over the compact interval are attained at its endpoints.  Every output
    exceeds -1.
    """
    at = _at(market, t)
    a = np.asarray(u, dtype=float)
    b = np.asarray(u_prime, dtype=float)
    if a.shape != (market.grid.n_atoms,) or b.shape != a.shape:
        raise ShapeError("u and u_prime must align with the grid")

    def quotient(pi):
        hi_arg = a - pi * at.beta
        lo_arg = b - pi * at.beta
        diff = a - b
        near = np.abs(diff) <= 1e-8 * (1.0 + np.abs(a) + np.abs(b))
        mid = 0.5 * (hi_arg + lo_arg)
        safe = np.where(near, 1.0, diff)
        dq = (g_alpha(at.alpha, hi_arg) - g_alpha(at.alpha, lo_arg)) / safe
        return np.where(near, g_alpha_prime(at.alpha, mid), dq)

    q_lo = quotient(at.lo)
    q_hi = quotient(at.hi)
    return np.where(a >= b, np.maximum(q_lo, q_hi), np.minimum(q_lo, q_hi))


def lambda_slope(market: MarketSpec, t: float, z: float, z_prime: float, u, *,
                 tol: float = DEFAULT_MIN_TOL) -> float:
    """Finite slope (f(t,z,u) - f(t,z',u)) / (z - z'); zero when z = z'."""
    if z == z_prime:
        return 0.0
    return (f_eval(market, t, z, u, tol=tol)
            - f_eval(market, t, z_prime, u, tol=tol)) / (z - z_prime)


# --- slice evaluator used by the lattice solver ----------------------------


@dataclass
class GeneratorSpec:
    """Evaluable driver selected by ``kind``, vectorized over lattice slices.

    kinds: "f", "f_tilde", "f_m", "f_1m", "f_km", "linear".  The stage
    driver ``f_km`` reads per-slice anchor arrays (aligned with lattice
    nodes).  ``linear`` is the affine benchmark driver
    ``-theta(t) z - linear_const`` used for exact lower bounds and oracles.
    """

    market: MarketSpec
    kind: str = "f"
    m: int | None = None
    m_cap: float | None = None
    anchor_z: list | None = None   # per-slice (S_i,) arrays, stage drivers only
    anchor_u: list | None = None   # per-slice (S_i, J) arrays
    linear_const: float = 0.0
    min_tol: float = DEFAULT_MIN_TOL
    tag: str = field(default="", compare=False)

    def __post_init__(self):
        kinds = {"f", "f_tilde", "f_m", "f_1m", "f_km", "linear"}
        if self.kind not in kinds:
            raise ConfigError(f"unknown generator kind {self.kind!r}", "generator.kind")
        if self.kind in {"f_m", "f_1m", "f_km"} and self.m is not None and self.m < 1:
            raise ConfigError("truncation level m must be >= 1", "generator.m")
        if self.kind == "f_km" and (self.anchor_z is None or self.anchor_u is None):
            raise ConfigError("f_km requires anchor processes", "generator.anchors")
        if not self.tag:
            self.tag = self.kind if self.m is None else f"{self.kind}[m={self.m}]"

    def eval_slice(self, slice_index: int, t: float, Z: np.ndarray, U: np.ndarray):
        """Driver values (and inner minimizers where defined) on one slice.

        Z: (S,), U: (S, J) node arrays.  Returns ``(f_values, pi)`` with pi
        None for drivers whose inner minimizer is not meaningful.
        """
        at = _at(self.market, t)
        Z = np.asarray(Z, dtype=float)
        U = np.asarray(U, dtype=float)
        if U.shape != (Z.size, self.market.grid.n_atoms):
            raise ShapeError("slice U misaligned with Z and the grid")
        full = np.ones(self.market.grid.n_atoms, dtype=bool)
        shift = at.theta / at.alpha

        if self.kind == "linear":
            return -at.theta * Z - self.linear_const * np.ones_like(Z), None

        if self.kind == "f":
            val, pi = _f_vec(at, Z, U, None, None, full, self.min_tol)
            return val, pi

        if self.kind == "f_tilde":
            val, pi = _f_vec(at, Z - shift, U, None, None, full, self.min_tol)
            base, _ = _f_vec(at, np.array([-shift]),
                             np.zeros((1, full.size)), None, None, full, self.min_tol)
            return val - base[0], pi

        mask = truncation_mask(self.market.grid, self.m)
        if self.kind == "f_m":
            val, pi = _f_vec(at, Z, U, self.m, self.m_cap, mask, self.min_tol)
            return val, pi

        if self.kind == "f_1m":
            val, pi = _f_vec(at, Z - shift, U, self.m, self.m_cap, mask, self.min_tol)
            base, _ = _f_vec(at, np.array([-shift]),
                             np.zeros((1, full.size)), None, None, full, self.min_tol)
            return val - base[0], pi

        # f_km: re-anchored at the running sums of earlier stage solutions
        az = np.asarray(self.anchor_z[slice_index], dtype=float)
        au = np.asarray(self.anchor_u[slice_index], dtype=float)
        if az.shape != Z.shape or au.shape != U.shape:
            raise ShapeError("anchor arrays misaligned with the slice")
        val, pi = _f_vec(at, Z + az - shift, U + au, self.m, self.m_cap, mask,
                         self.min_tol)
        base, _ = _f_vec(at, az - shift, au, self.m, self.m_cap, mask, self.min_tol)
        return val - base, pi
