"""Finite MDPs, softmax policies and the Markov reward chain a policy induces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DimensionError

STOCHASTIC_ATOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """A finite MDP with kernel ``kernel[x, a, y] = P(y | x, a)`` and reward ``reward[x, a]``."""

    kernel: np.ndarray
    reward: np.ndarray
    horizon: int

    def __post_init__(self):
        kernel = _frozen(self.kernel)
        reward = _frozen(self.reward)
        if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
            raise DimensionError(f"kernel must have shape (|X|, |A|, |X|), got {kernel.shape}")
        if reward.shape != kernel.shape[:2]:
            raise DimensionError(
                f"reward must have shape {kernel.shape[:2]}, got {reward.shape}"
            )
        if int(self.horizon) < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon}")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[1]


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Softmax policy over per state-action logits.

    The logits are ``features @ theta`` reshaped to ``(|X|, |A|)``.  Without
    ``features`` the parameter is the logit table itself (``k1 = |X| |A|``);
    a feature matrix lets a low-dimensional ``theta`` drive the table.
    ``lo``/``hi`` bound ``theta`` coordinate-wise and define the projection box.
    """

    theta: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        theta = _frozen(np.atleast_1d(self.theta))
        lo = _frozen(np.broadcast_to(self.lo, theta.shape))
        hi = _frozen(np.broadcast_to(self.hi, theta.shape))
        if np.any(lo > hi):
            raise ValueError("bounds must satisfy lo <= hi coordinate-wise")
        if np.any(theta < lo) or np.any(theta > hi):
            raise ValueError("theta lies outside its bounds")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if self.features is not None:
            feats = _frozen(self.features)
            if feats.ndim != 2 or feats.shape[1] != theta.size:
                raise DimensionError(
                    f"features must have shape (|X||A|, {theta.size}), got {feats.shape}"
                )
            object.__setattr__(self, "features", feats)

    @classmethod
    def uniform(cls, n_states, n_actions, bound=10.0):
        k = n_states * n_actions
        return cls(np.zeros(k), -bound * np.ones(k), bound * np.ones(k))

    def with_theta(self, theta) -> "SoftmaxPolicy":
        """Same policy family and bounds at another parameter (not projected)."""
        theta = np.asarray(theta, dtype=float)
        return SoftmaxPolicy(
            theta, np.minimum(self.lo, theta), np.maximum(self.hi, theta), self.features
        )

    def logits(self, n_states, n_actions) -> np.ndarray:
        flat = self.theta if self.features is None else self.features @ self.theta
        if flat.size != n_states * n_actions:
            raise DimensionError(
                f"policy yields {flat.size} logits, MDP needs {n_states}x{n_actions}"
            )
        return flat.reshape(n_states, n_actions)

    def probabilities(self, n_states, n_actions) -> np.ndarray:
        z = self.logits(n_states, n_actions)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class InducedChain:
    """Row-stochastic ``p`` with state rewards ``r``, started from state ``x0``."""

    p: np.ndarray
    r: np.ndarray
    x0: int = 0

    def __post_init__(self):
        p = _frozen(self.p)
        r = _frozen(self.r)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or r.shape != (p.shape[0],):
            raise DimensionError(f"inconsistent chain shapes p{p.shape} r{r.shape}")
        if not 0 <= int(self.x0) < p.shape[0]:
            raise ValueError(f"x0={self.x0} outside 0..{p.shape[0] - 1}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "x0", int(self.x0))

    @property
    def n_states(self) -> int:
        return self.p.shape[0]


def validate_mdp(m: TabularMdp) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    for x in range(m.n_states):
        for a in range(m.n_actions):
            row = m.kernel[x, a]
            if np.any(row < 0):
                problems.append(f"kernel[{x},{a}] has negative entries")
            total = row.sum()
            if not np.isfinite(total) or abs(total - 1.0) > STOCHASTIC_ATOL:
                problems.append(f"kernel[{x},{a}] sums to {total!r}, not 1")
            rew = m.reward[x, a]
            if not (-1.0 <= rew <= 1.0):
                problems.append(f"reward[{x},{a}] = {rew!r} outside [-1, 1]")
    return problems


def validate_chain(p, r=None, atol=STOCHASTIC_ATOL) -> list[str]:
    p = np.asarray(p, dtype=float)
    problems = []
    if np.any(p < 0):
        problems.append("p has negative entries")
    sums = p.sum(axis=1)
    for x in np.flatnonzero(np.abs(sums - 1.0) > atol):
        problems.append(f"row {x} of p sums to {sums[x]!r}")
    if r is not None:
        for x in np.flatnonzero(np.abs(np.asarray(r)) > 1.0):
            problems.append(f"r[{x}] = {r[x]!r} outside [-1, 1]")
    return problems


def induce_chain(m: TabularMdp, pol: SoftmaxPolicy, x0: int = 0) -> InducedChain:
    """Average kernel and reward over the policy's action probabilities."""
    problems = validate_mdp(m)
    if problems:
        raise ValueError("invalid MDP: " + "; ".join(problems))
    pi = pol.probabilities(m.n_states, m.n_actions)
    p = np.einsum("xa,xay->xy", pi, m.kernel)
    r = np.einsum("xa,xa->x", pi, m.reward)
    # Clean rounding so rows stay stochastic to ~1e-16.
    p = np.clip(p, 0.0, None)
    p /= p.sum(axis=1, keepdims=True)
    return InducedChain(p, np.clip(r, -1.0, 1.0), x0)


@dataclass(frozen=True)
class Ergodicity:
    irreducible: bool
    aperiodic: bool

    @property
    def ergodic(self) -> bool:
        return self.irreducible and self.aperiodic


def _period(adj: np.ndarray, nodes: np.ndarray) -> int:
    """gcd of cycle lengths of the strongly connected subgraph on ``nodes``."""
    sub = adj[np.ix_(nodes, nodes)]
    level = np.full(len(nodes), -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(sub[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    us, vs = np.nonzero(sub)
    diffs = np.abs(level[us] + 1 - level[vs])
    return reduce(math.gcd, diffs.tolist(), 0)


def check_ergodicity(c) -> Ergodicity:
    """Irreducibility and aperiodicity of the positive-entry graph of ``c.p``.

    For reducible chains ``aperiodic`` reports whether every closed class is
    aperiodic.
    """
    p = c.p if isinstance(c, InducedChain) else np.asarray(c)
    adj = p > 0
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    closed = []
    for k in range(n_comp):
        members = np.flatnonzero(labels == k)
        outside = np.flatnonzero(labels != k)
        if not adj[np.ix_(members, outside)].any():
            closed.append(members)
    aperiodic = all(_period(adj, members) == 1 for members in closed)
    return Ergodicity(n_comp == 1, aperiodic)


def is_lattice(r, min_step=1e-3) -> bool:
    """Heuristic: do the distinct reward values sit on a common arithmetic grid?

    Runs a tolerant Euclid gcd over the gaps between distinct values.  Grids
    finer than ``min_step`` times the value span are treated as a continuum.
    """
    vals = np.unique(np.round(np.asarray(r, dtype=float), 12))
    if vals.size < 2:
        return True
    span = vals[-1] - vals[0]
    tol = 1e-9 * span
    g = 0.0
    for d in np.diff(vals):
        a, b = max(g, d), min(g, d)
        while b > tol:
            a, b = b, math.fmod(a, b)
            if a - b <= tol:
                b = 0.0
        g = a
    return g >= min_step * span
