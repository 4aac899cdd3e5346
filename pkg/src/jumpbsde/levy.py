"""Finite atomic jump measures and the exponential jump functional.

A jump measure is represented by a finite grid of atoms ``(x_j, w_j)``:
``x_j`` is the jump size (never zero) and ``w_j`` the mass per unit time.
Infinite-activity measures are approximated by user-supplied grids; the
solver itself only ever evaluates finite truncations, so nothing here needs
more generality than a finite sum.

The functional

    ``|u|_a = sum_j w_j * g_a(u_j)``,  ``g_a(y) = (exp(a*y) - a*y - 1) / a``

is the jump-side analogue of quadratic growth: convex, nonnegative, zero
only at u = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

# exp() overflows double precision just above exp(709)
_EXP_ARG_MAX = 700.0


@dataclass(frozen=True)
class JumpGrid:
    """Finite atomic measure: atoms ``x`` (jump sizes) with weights ``w``."""

    x: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)
        if x.shape != w.shape or x.ndim != 1:
            raise ShapeError(f"atom sizes {x.shape} and weights {w.shape} misaligned")
        if np.any(x == 0.0):
            raise ParameterError("jump atoms must have nonzero size")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)) or not np.all(np.isfinite(x)):
            raise ParameterError("atom weights must be finite and nonnegative")
        x.setflags(write=False)
        w.setflags(write=False)

    @property
    def n_atoms(self) -> int:
        return self.x.size

    @property
    def mass(self) -> float:
        """Total mass per unit time (finite by construction)."""
        return float(self.w.sum())

    def small_jump_moment(self) -> float:
        """``sum_j w_j * (1 ^ |x_j|)^2`` -- finite for any finite grid."""
        return float(np.sum(self.w * np.minimum(1.0, np.abs(self.x)) ** 2))

    @staticmethod
    def empty() -> "JumpGrid":
        return JumpGrid(x=np.empty(0), w=np.empty(0))


def _check_alpha(alpha: float) -> float:
    if not (alpha > 0.0) or not math.isfinite(alpha):
        raise ParameterError(f"alpha must be a positive real, got {alpha}")
    return float(alpha)


def _check_aligned(u, grid: JumpGrid) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (grid.n_atoms,):
        raise ShapeError(
            f"u has {u.shape[-1] if u.ndim else 0} values for a grid of {grid.n_atoms} atoms"
        )
    return u


def g_alpha(alpha: float, y):
    """``(exp(alpha*y) - alpha*y - 1) / alpha``, evaluated stably via expm1.

    Nonnegative, convex, and zero exactly at y = 0.  Arguments with
    ``alpha*y > 700`` are rejected rather than silently overflowed.
    """
    alpha = _check_alpha(alpha)
    ay = alpha * np.asarray(y, dtype=float)
    if np.any(ay > _EXP_ARG_MAX):
        raise ParameterError("alpha*y exceeds the double-precision exp range")
    return (np.expm1(ay) - ay) / alpha


def g_alpha_prime(alpha: float, y):
    """Derivative of :func:`g_alpha` in y: ``exp(alpha*y) - 1`` (always > -1)."""
    alpha = _check_alpha(alpha)
    ay = alpha * np.asarray(y, dtype=float)
    if np.any(ay > _EXP_ARG_MAX):
        raise ParameterError("alpha*y exceeds the double-precision exp range")
    return np.expm1(ay)


def u_alpha_norm(alpha: float, u, grid: JumpGrid) -> float:
    """Jump functional ``sum_j w_j g_alpha(u_j)`` of u against the grid."""
    u = _check_aligned(u, grid)
    if grid.n_atoms == 0:
        return 0.0
    return float(np.sum(grid.w * g_alpha(alpha, u), axis=-1))


def l2_norm_sq(u, grid: JumpGrid) -> float:
    """Weighted squared L2 norm ``sum_j w_j u_j^2``."""
    u = _check_aligned(u, grid)
    if grid.n_atoms == 0:
        return 0.0
    return float(np.sum(grid.w * u * u, axis=-1))


def linf_norm(u, grid: JumpGrid) -> float:
    """Sup norm of u over atoms carrying positive weight."""
    u = _check_aligned(u, grid)
    charged = grid.w > 0.0
    if not np.any(charged):
        return 0.0
    return float(np.max(np.abs(u[..., charged])))


def truncate(grid: JumpGrid, m: int) -> JumpGrid:
    """Sub-grid of atoms with ``|x| >= 1/m``; weights unchanged.

    Monotone in m (atom-set inclusion) and idempotent at fixed m.  An empty
    result is permitted.
    """
    if int(m) != m or m < 1:
        raise ParameterError(f"truncation level must be a positive integer, got {m}")
    keep = np.abs(grid.x) >= 1.0 / float(m)
    return JumpGrid(x=grid.x[keep], w=grid.w[keep])


def truncation_mask(grid: JumpGrid, m: int | None) -> np.ndarray:
    """Boolean mask of atoms retained at level m (all atoms for m = None)."""
    if m is None:
        return np.ones(grid.n_atoms, dtype=bool)
    if int(m) != m or m < 1:
        raise ParameterError(f"truncation level must be a positive integer, got {m}")
    return np.abs(grid.x) >= 1.0 / float(m)


def _branch_ratios(alpha: float, K: float) -> tuple[float, float]:
    """Extremal ratios g_alpha(y) / y^2 over 0 < |y| <= K.

    The ratio increases in y, so the max sits at +K and the min at -K; the
    sharp sandwich constants are the max ratio and the reciprocal of the min
    ratio.  Small alpha*K uses the series (both ratios -> alpha/2) to dodge
    catastrophic cancellation.
    """
    aK = alpha * K
    if aK > _EXP_ARG_MAX:
        raise ParameterError("alpha*K exceeds the double-precision exp range")
    if aK < 1e-4:
        upper = 0.5 * alpha * (1.0 + aK / 3.0 + aK * aK / 12.0)
        lower = (2.0 / alpha) / (1.0 - aK / 3.0 + aK * aK / 12.0)
    else:
        upper = (math.expm1(aK) - aK) / (alpha * K * K)
        lower = (alpha * K * K) / (math.expm1(-aK) + aK)
    return upper, lower


def equivalence_constant(alpha: float, K: float) -> float:
    """Constant C(alpha, K) of the norm-equivalence sandwich.

    For every u with ``|u|_inf <= K``:

        ``(1/C) * sum w u^2  <=  |u|_alpha  <=  C * sum w u^2``.

    Maximum of three terms: the sharp upper-branch ratio ``g_a(K)/K^2``, the
    sharp lower-branch requirement (the reciprocal of the ratio at -K; the
    floor alone under-covers it once alpha*K is of order one), and the
    conventional small-K floor ``2/(alpha * min(1, K^2))``.  Larger C only
    makes downstream splitting more conservative.
    """
    alpha = _check_alpha(alpha)
    if K <= 0.0:
        raise ParameterError(f"sup bound K must be positive, got {K}")
    upper, lower = _branch_ratios(alpha, K)
    floor = 2.0 / (alpha * min(1.0, K * K))
    return max(upper, lower, floor)


def sharp_equivalence_constant(alpha: float, K: float) -> float:
    """Minimal C making the norm-equivalence sandwich true for |u|_inf <= K.

    Unlike :func:`equivalence_constant` this omits the conventional floor
    term, which blows up as K -> 0 and would needlessly inflate the terminal
    splitting; both functions satisfy the sandwich.
    """
    alpha = _check_alpha(alpha)
    if K <= 0.0:
        raise ParameterError(f"sup bound K must be positive, got {K}")
    upper, lower = _branch_ratios(alpha, K)
    return max(upper, lower)


# --- JSON wire format: array of {"x": number, "w": number} ---------------


def grid_to_json(grid: JumpGrid) -> list[dict]:
    return [{"x": float(x), "w": float(w)} for x, w in zip(grid.x, grid.w)]


def grid_from_json(data) -> JumpGrid:
    """Load a grid from the wire format, rejecting x = 0 or w < 0."""
    if isinstance(data, str):
        data = json.loads(data)
    if not isinstance(data, list):
        raise ParameterError("jump grid JSON must be an array of {x, w} objects")
    xs, ws = [], []
    for i, entry in enumerate(data):
        try:
            x = float(entry["x"])
            w = float(entry["w"])
        except (TypeError, KeyError) as exc:
            raise ParameterError(f"jump grid entry {i} is not an {{x, w}} object") from exc
        if x == 0.0:
            raise ParameterError(f"jump grid entry {i} has x = 0")
        if w < 0.0:
            raise ParameterError(f"jump grid entry {i} has negative weight")
        xs.append(x)
        ws.append(w)
    return JumpGrid(x=np.asarray(xs), w=np.asarray(ws))
