"""Monte Carlo ground truth for the cumulative reward of an induced chain.

Every trajectory draws from its own counter-based Philox stream keyed by
``(seed, trajectory_index)``, so a batch is reproducible bit-for-bit no matter
how it is chunked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .edgeworth import MEAN_VARIANCE, VALUE_AT_RISK, RiskSpec
from .mdp import InducedChain

STREAM_SUMS = 0
STREAM_PATHS = 1
_BLOCK_UNIFORMS = 1 << 22


def stream(seed: int, index: int, tag: int = STREAM_SUMS) -> np.random.Generator:
    """Independent generator for ``(seed, index)``; ``tag`` separates stream families."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    bitgen = np.random.Philox(counter=[0, 0, 0, tag], key=[seed, index])
    return np.random.Generator(bitgen)


def _cumulative(p) -> np.ndarray:
    cum = np.cumsum(np.asarray(p, dtype=float), axis=1)
    cum[:, -1] = 1.0
    return cum


@njit(cache=True)
def _next_state(cum_row, u):
    j = 0
    while cum_row[j] <= u:
        j += 1
    return j


@njit(cache=True)
def _sum_rewards(cum, r, x0, uniforms, out):
    n, steps = uniforms.shape
    for i in range(n):
        x = x0
        s = r[x]
        for t in range(steps):
            x = _next_state(cum[x], uniforms[i, t])
            s += r[x]
        out[i] = s


@njit(cache=True)
def _walk(cum, x0, uniforms, states):
    x = x0
    states[0] = x
    for t in range(uniforms.shape[0]):
        x = _next_state(cum[x], uniforms[t])
        states[t + 1] = x


@dataclass(frozen=True, eq=False)
class SimBatch:
    n_traj: int
    horizon: int
    seed: int
    s_values: np.ndarray

    def summary(self) -> dict:
        s = self.s_values
        return {
            "n_traj": self.n_traj,
            "horizon": self.horizon,
            "seed": self.seed,
            "mean": float(s.mean()),
            "var": float(s.var(ddof=1)) if s.size > 1 else 0.0,
            "min": float(s.min()),
            "max": float(s.max()),
        }


def simulate(c: InducedChain, n_traj: int, horizon: int, seed: int, start: int = 0) -> SimBatch:
    """Realised ``S_T`` for trajectories ``start .. start + n_traj - 1``."""
    cum = _cumulative(c.p)
    r = np.asarray(c.r, dtype=float)
    steps = horizon - 1
    out = np.empty(n_traj)
    block = max(1, _BLOCK_UNIFORMS // max(steps, 1))
    for b0 in range(0, n_traj, block):
        b1 = min(n_traj, b0 + block)
        u = np.empty((b1 - b0, steps))
        for i in range(b0, b1):
            u[i - b0] = stream(seed, start + i).random(steps)
        _sum_rewards(cum, r, c.x0, u, out[b0:b1])
    return SimBatch(n_traj, horizon, seed, out)


def simulate_path(c: InducedChain, n_steps: int, seed: int, index: int = 0) -> np.ndarray:
    """One trajectory of ``n_steps + 1`` states starting at ``c.x0``."""
    cum = _cumulative(c.p)
    states = np.empty(n_steps + 1, dtype=np.int64)
    _walk(cum, c.x0, stream(seed, index, STREAM_PATHS).random(n_steps), states)
    return states


def empirical_quantile(s_values, lam) -> float:
    """``inf{y : F_n(y) > lam}`` for the empirical CDF ``F_n``."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    s = np.sort(np.asarray(s_values, dtype=float))
    n = s.size
    k = int(math.floor(lam * n))
    # F_n(s[k]) = (k+1)/n must exceed lam; fix float rounding in lam*n.
    while k < n - 1 and (k + 1) <= lam * n:
        k += 1
    while k > 0 and k > lam * n:
        k -= 1
    return float(s[k])


def empirical_risk(b: SimBatch, spec: RiskSpec) -> float:
    """Sample analogue of the risk: ``-q_lambda`` or ``-mean(S)/T + lam var(S)/T``."""
    s = b.s_values
    if s.size < 2:
        raise ValueError("need at least two trajectories")
    if spec.kind == VALUE_AT_RISK:
        return -empirical_quantile(s, spec.lam)
    assert spec.kind == MEAN_VARIANCE
    return -s.mean() / b.horizon + spec.lam * s.var(ddof=1) / b.horizon


@dataclass(frozen=True)
class Cumulants:
    mean_rate: float
    var_rate: float
    third_rate: float
    se_mean: float
    se_var: float
    se_third: float


def _k_stats(s1, s2, s3, n):
    k2 = (n * s2 - s1 * s1) / (n * (n - 1))
    k3 = (2 * s1**3 - 3 * n * s1 * s2 + n * n * s3) / (n * (n - 1) * (n - 2))
    return k2, k3


def _jackknife_se(loo):
    n = loo.size
    return math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))


def empirical_cumulants(b: SimBatch) -> Cumulants:
    """``mean/T``, ``k2/T`` and ``k3/T`` of ``S_T`` with jackknife standard errors."""
    n = b.s_values.size
    if n < 10:
        raise ValueError("need at least 10 trajectories")
    s = np.asarray(b.s_values, dtype=float)
    shift = s.mean()
    d = s - shift
    s1, s2, s3 = d.sum(), (d**2).sum(), (d**3).sum()
    k2, k3 = _k_stats(s1, s2, s3, n)
    loo_k2, loo_k3 = _k_stats(s1 - d, s2 - d**2, s3 - d**3, n - 1)
    loo_mean = (s.sum() - s) / (n - 1)
    t = b.horizon
    return Cumulants(
        mean_rate=s.mean() / t,
        var_rate=k2 / t,
        third_rate=k3 / t,
        se_mean=_jackknife_se(loo_mean) / t,
        se_var=_jackknife_se(loo_k2) / t,
        se_third=_jackknife_se(loo_k3) / t,
    )


def ks_distance(samples, cdf) -> float:
    """Sup-distance between the empirical CDF of ``samples`` and a continuous ``cdf``.

    Both one-sided limits of the empirical step function are compared at
    every distinct sample value.
    """
    vals, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
    n = counts.sum()
    right = np.cumsum(counts) / n
    left = right - counts / n
    g = np.asarray(cdf(vals), dtype=float)
    return float(max(np.max(np.abs(right - g)), np.max(np.abs(left - g))))


def dkw_radius(n, alpha=0.05) -> float:
    """Dvoretzky-Kiefer-Wolfowitz band half-width at level ``1 - alpha``."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))
