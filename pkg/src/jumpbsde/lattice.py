"""Discrete-time, discrete-noise approximation of the driving pair.

Per step the Brownian increment is binomial (+-sqrt(dt), probability 1/2
each) and at most one jump fires: atom j with probability ``w_j * dt``, no
jump with the complementary probability.  Brownian and jump components are
independent, so a node has ``B = 2 * (1 + J)`` branches.  Binomial
increments give an exact discrete martingale representation: any assignment
of child values decomposes as

    V = E[V] + Z * dW + sum_j U_j * (1{jump j} - w_j dt) + R

with the residual R orthogonal (in the branch measure) to the constant, the
Brownian increment, and every jump indicator.

Two node indexings are supported.  ``tree`` enumerates full path prefixes
(child of node k under branch b is ``k * B + b``) and supports arbitrary
path functionals; it is capped because it grows like B^n.  ``markov``
recombines nodes by their branch-type counts, which is sufficient whenever
coefficients are constant in time and the terminal condition depends on the
path only through per-branch counts (price, Brownian level, compensated
sums all do).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError, ShapeError, StepSizeError
from .levy import JumpGrid

MAX_TREE_STEPS = 20
MAX_TREE_NODES = 1 << 22
MAX_MARKOV_STATES = 20_000_000


@dataclass
class Path:
    """Sampled driving path: one branch label per step plus derived views."""

    branch: np.ndarray   # (n,) int
    dw: np.ndarray       # (n,) float, +-sqrt(dt)
    jump: np.ndarray     # (n,) int, -1 means no jump
    node: np.ndarray     # (n+1,) int node index per slice
    seed: int


@dataclass
class PathBatch:
    """Vectorized bundle of sampled paths (row-per-path arrays)."""

    branch: np.ndarray   # (count, n)
    dw: np.ndarray       # (count, n)
    jump: np.ndarray     # (count, n)
    node: np.ndarray     # (count, n+1)
    seed: int

    @property
    def count(self) -> int:
        return self.branch.shape[0]

    def __iter__(self):
        for i in range(self.count):
            yield Path(self.branch[i], self.dw[i], self.jump[i], self.node[i],
                       self.seed)


@dataclass
class Lattice:
    times: np.ndarray
    dt: float
    T: float
    grid: JumpGrid
    mode: str
    n_steps: int
    branch_prob: np.ndarray = field(repr=False)
    branch_dw: np.ndarray = field(repr=False)
    branch_jump: np.ndarray = field(repr=False)
    _states: list | None = field(default=None, repr=False)
    _child: list | None = field(default=None, repr=False)
    _probs: list = field(default_factory=list, repr=False)

    @property
    def n_branches(self) -> int:
        return self.branch_prob.size

    @property
    def n_atoms(self) -> int:
        return self.grid.n_atoms

    def slice_size(self, i: int) -> int:
        if self.mode == "tree":
            return self.n_branches ** i if self.n_steps else 1
        return len(self._states[i])

    def branch_index(self, s_up: int, jump: int) -> int:
        """Branch label for Brownian sign s_up (0 down, 1 up) and jump index
        (-1 for no jump)."""
        return s_up * (1 + self.n_atoms) + (jump + 1)

    # --- backward plumbing -------------------------------------------------

    def children_values(self, i: int, next_values: np.ndarray) -> np.ndarray:
        """(S_i, B) matrix of the slice-(i+1) values seen from each node."""
        next_values = np.asarray(next_values, dtype=float)
        if next_values.shape != (self.slice_size(i + 1),):
            raise ShapeError(
                f"slice {i + 1} values have size {next_values.size}, "
                f"expected {self.slice_size(i + 1)}"
            )
        if self.mode == "tree":
            return next_values.reshape(self.slice_size(i), self.n_branches)
        return next_values[self._child[i]]

    def conditional_expectation(self, child_values: np.ndarray) -> np.ndarray:
        """Probability-weighted average over branches; accepts (B,) or (S, B)."""
        child_values = self._as_children(child_values)
        return child_values @ self.branch_prob

    def brownian_projection(self, child_values: np.ndarray) -> np.ndarray:
        """Discrete Brownian integrand ``Z = E[V dW] / dt``."""
        child_values = self._as_children(child_values)
        return child_values @ (self.branch_prob * self.branch_dw) / self.dt

    def jump_projection(self, child_values: np.ndarray) -> np.ndarray:
        """Predictable jump amplitudes ``U_j``: the value change caused by
        jump j relative to no jump, averaged over the Brownian sign."""
        child_values = self._as_children(child_values)
        J = self.n_atoms
        out = np.empty(child_values.shape[:-1] + (J,), dtype=float)
        for j in range(J):
            up = child_values[..., self.branch_index(1, j)] \
                - child_values[..., self.branch_index(1, -1)]
            dn = child_values[..., self.branch_index(0, j)] \
                - child_values[..., self.branch_index(0, -1)]
            out[..., j] = 0.5 * (up + dn)
        return out

    def _as_children(self, child_values) -> np.ndarray:
        child_values = np.asarray(child_values, dtype=float)
        if child_values.shape[-1] != self.n_branches:
            raise ShapeError(
                f"need one value per branch ({self.n_branches}), "
                f"got {child_values.shape}"
            )
        return child_values

    # --- forward plumbing --------------------------------------------------

    def forward_values(self, increments) -> list:
        """Node values of an additive path functional started at 0.

        ``increments`` maps a time index i to the (B,) per-branch additive
        contribution over step i (or is a constant (B,) array).  In markov
        mode the functional must be a function of branch counts, which holds
        exactly when the per-branch increments are time-independent; this is
        asserted.
        """
        per_step = [np.asarray(increments(i) if callable(increments) else increments,
                               dtype=float)
                    for i in range(self.n_steps)]
        for inc in per_step:
            if inc.shape != (self.n_branches,):
                raise ShapeError("per-branch increment must have one entry per branch")
        values = [np.zeros(1)]
        if self.mode == "markov" and self.n_steps > 1:
            if any(not np.array_equal(per_step[0], inc) for inc in per_step[1:]):
                raise ConfigError(
                    "markov mode supports only time-independent per-branch "
                    "increments", "lattice.mode")
        for i in range(self.n_steps):
            cur = values[i]
            if self.mode == "tree":
                nxt = np.repeat(cur, self.n_branches) \
                    + np.tile(per_step[i], self.slice_size(i))
            else:
                nxt = np.empty(self.slice_size(i + 1))
                child = self._child[i]
                for b in range(self.n_branches):
                    nxt[child[:, b]] = cur + per_step[i][b]
            values.append(nxt)
        return values

    def brownian_values(self) -> list:
        """Per-node Brownian level W_i (exact partial sums of dW)."""
        return self.forward_values(self.branch_dw)

    def node_probabilities(self, i: int) -> np.ndarray:
        """Unconditional probability of each slice-i node (cached)."""
        while len(self._probs) <= i:
            k = len(self._probs)
            if k == 0:
                self._probs.append(np.ones(1))
                continue
            prev = self._probs[k - 1]
            if self.mode == "tree":
                nxt = np.repeat(prev, self.n_branches) \
                    * np.tile(self.branch_prob, prev.size)
            else:
                nxt = np.zeros(self.slice_size(k))
                child = self._child[k - 1]
                for b in range(self.n_branches):
                    np.add.at(nxt, child[:, b], prev * self.branch_prob[b])
            self._probs.append(nxt)
        return self._probs[i]

    # --- sampling ----------------------------------------------------------

    def sample_paths(self, count: int, seed: int) -> PathBatch:
        """i.i.d. paths matching the branch probabilities; reproducible."""
        if count < 1:
            raise ParameterError(f"path count must be >= 1, got {count}")
        rng = np.random.default_rng(seed)
        branch = rng.choice(self.n_branches, size=(count, self.n_steps),
                            p=self.branch_prob)
        dw = self.branch_dw[branch]
        jump = self.branch_jump[branch]
        node = np.zeros((count, self.n_steps + 1), dtype=np.int64)
        for i in range(self.n_steps):
            if self.mode == "tree":
                node[:, i + 1] = node[:, i] * self.n_branches + branch[:, i]
            else:
                node[:, i + 1] = self._child[i][node[:, i], branch[:, i]]
        return PathBatch(branch=branch, dw=dw, jump=jump, node=node, seed=seed)


def build(n_steps: int, grid: JumpGrid, T: float, mode: str = "tree") -> Lattice:
    """Build the lattice; fails loudly on probability or size violations."""
    if n_steps < 0 or int(n_steps) != n_steps:
        raise ParameterError(f"n_steps must be a nonnegative integer, got {n_steps}")
    if T <= 0.0:
        raise ParameterError(f"T must be positive, got {T}")
    if mode not in ("tree", "markov"):
        raise ConfigError(f"unknown lattice mode {mode!r}", "lattice.mode")

    J = grid.n_atoms
    B = 2 * (1 + J)
    if n_steps == 0:
        lat = Lattice(times=np.zeros(1), dt=T, T=T, grid=grid, mode=mode,
                      n_steps=0, branch_prob=np.empty(0), branch_dw=np.empty(0),
                      branch_jump=np.empty(0, dtype=int))
        if mode == "markov":
            lat._states = [np.zeros((1, B), dtype=np.int32)]
            lat._child = []
        return lat

    dt = T / n_steps
    mass = grid.mass
    if dt * mass > 0.5:
        raise StepSizeError(
            f"dt * jump mass = {dt * mass:.4g} > 0.5",
            suggested_n_steps=int(math.ceil(2.0 * T * mass)),
        )

    sqdt = math.sqrt(dt)
    prob = np.empty(B)
    dw = np.empty(B)
    jmp = np.empty(B, dtype=int)
    p_none = 1.0 - dt * mass
    for s in (0, 1):
        for j in range(-1, J):
            b = s * (1 + J) + (j + 1)
            dw[b] = sqdt if s else -sqdt
            jmp[b] = j
            prob[b] = 0.5 * (p_none if j < 0 else dt * grid.w[j])

    lat = Lattice(times=np.linspace(0.0, T, n_steps + 1), dt=dt, T=T, grid=grid,
                  mode=mode, n_steps=n_steps, branch_prob=prob, branch_dw=dw,
                  branch_jump=jmp)

    if mode == "tree":
        if n_steps > MAX_TREE_STEPS or B ** n_steps > MAX_TREE_NODES:
            raise ConfigError(
                f"full tree needs {B}^{n_steps} terminal nodes; use markov mode",
                "lattice.mode",
            )
        return lat

    # markov: enumerate branch-count states slice by slice
    states: list[np.ndarray] = [np.zeros((1, B), dtype=np.int32)]
    child: list[np.ndarray] = []
    eye = np.eye(B, dtype=np.int32)
    total = 1
    for i in range(n_steps):
        cur = states[i]
        cand = (cur[:, None, :] + eye[None, :, :]).reshape(-1, B)
        nxt, inverse = np.unique(cand, axis=0, return_inverse=True)
        child.append(inverse.reshape(cur.shape[0], B).astype(np.int64))
        states.append(nxt.astype(np.int32))
        total += nxt.shape[0]
        if total > MAX_MARKOV_STATES:
            raise ConfigError("markov lattice exceeds the state budget",
                              "lattice.n_steps")
    lat._states = states
    lat._child = child
    return lat
