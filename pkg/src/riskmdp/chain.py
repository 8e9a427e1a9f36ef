"""Exact analysis of a finite Markov reward chain.

Stationary distribution, Poisson equation through the fundamental kernel
``Z = (I - P - Xi)^{-1}``, asymptotic variance (closed form and
autocovariance series), the third-order constant ``varrho`` of the Edgeworth
correction, and the Dobrushin ergodicity coefficient.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateVarianceWarning,
    LatticeRewardWarning,
    NotErgodicError,
    SeriesDecayError,
    SingularKernelError,
)
from .mdp import InducedChain, check_ergodicity, is_lattice

SIGMA_MIN_FLOOR = 1e-10
DEFAULT_TOL = 1e-12
MAX_LAG_TERMS = 200_000


def _matrix(c) -> np.ndarray:
    return np.asarray(c.p if isinstance(c, InducedChain) else c, dtype=float)


@dataclass(frozen=True, eq=False)
class FundamentalKernel:
    z: np.ndarray
    sigma_min_h: float


@dataclass(frozen=True, eq=False)
class ChainSolution:
    """Everything the Edgeworth-corrected CDF needs for one chain."""

    xi: np.ndarray
    mean: float
    rhat: np.ndarray
    sigma2: float
    varrho: float
    tau1: float
    sigma_min_h: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "xi": [float(v) for v in self.xi],
            "mean": float(self.mean),
            "rhat": [float(v) for v in self.rhat],
            "sigma2": float(self.sigma2),
            "varrho": float(self.varrho),
            "tau1": float(self.tau1),
            "sigma_min_h": float(self.sigma_min_h),
        }


def ergodicity_coefficient(p) -> float:
    """Dobrushin coefficient ``1/2 max_{i,j} ||P(i,.) - P(j,.)||_1``."""
    p = _matrix(p)
    diffs = np.abs(p[:, None, :] - p[None, :, :]).sum(axis=2)
    return float(min(1.0, 0.5 * diffs.max()))


def stationary_distribution(c, check=True) -> np.ndarray:
    """Left unit eigenvector of ``P`` normalised to a probability vector.

    Solves ``(P^T - I) xi = 0`` with the last equation replaced by ``sum(xi) = 1``.
    """
    p = _matrix(c)
    n = p.shape[0]
    if check:
        erg = check_ergodicity(p)
        if not erg.ergodic:
            raise NotErgodicError(
                f"chain is not ergodic (irreducible={erg.irreducible}, aperiodic={erg.aperiodic})"
            )
    a = p.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        xi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NotErgodicError("stationary system is singular: several unit eigenvalues") from exc
    if np.any(xi < -1e-12) or not np.all(np.isfinite(xi)):
        raise NotErgodicError(f"stationary solve returned a non-distribution: {xi}")
    xi = np.clip(xi, 0.0, None)
    return xi / xi.sum()


def fundamental_kernel(p, xi) -> FundamentalKernel:
    p = _matrix(p)
    n = p.shape[0]
    h = np.eye(n) - p - np.outer(np.ones(n), xi)
    sigma_min = float(np.linalg.svd(h, compute_uv=False)[-1])
    if not sigma_min > SIGMA_MIN_FLOOR:
        raise SingularKernelError(sigma_min)
    return FundamentalKernel(np.linalg.inv(h), sigma_min)


def solve_poisson(c: InducedChain, xi, mean):
    """Poisson solution ``rhat = Z (r - mean 1)``; returns ``(kernel, rhat)``."""
    fk = fundamental_kernel(c.p, xi)
    rhat = fk.z @ (c.r - mean)
    return fk, rhat


def poisson_residual(p, r, rhat, mean) -> float:
    p = _matrix(p)
    return float(np.max(np.abs(p @ rhat - rhat + r - mean)))


def _clamp_variance(sigma2):
    if sigma2 < 1e-8:
        warnings.warn(
            f"asymptotic variance {sigma2:.3e} is numerically zero; "
            "the central-limit approximation is degenerate",
            DegenerateVarianceWarning,
            stacklevel=3,
        )
    return max(float(sigma2), 0.0)


def asymptotic_variance(c: InducedChain, xi, rhat) -> float:
    """``sum_x [rhat(x)^2 - (P rhat)(x)^2] xi(x)``, clamped at zero."""
    prhat = c.p @ rhat
    return _clamp_variance(float(np.dot(xi, rhat**2 - prhat**2)))


def _term_cap(p, tol) -> int:
    """Hard cap on lag terms, from the Dobrushin contraction of some power of P.

    Powers up to Wielandt's bound ``(n-1)^2 + 1`` are tried until one has
    ``tau1 < 1``; the envelope then shrinks at least like ``tau1(P^m)^(k/m)``.
    Never more than ``MAX_LAG_TERMS``: a chain that slow is numerically decoupled.
    """
    n = p.shape[0]
    pm = p.copy()
    for m in range(1, (n - 1) ** 2 + 2):
        t = ergodicity_coefficient(pm)
        if t < 1.0:
            cap = m * math.ceil(10 * n * max(1.0, math.log(1.0 / tol)) / (1.0 - t))
            return min(cap, MAX_LAG_TERMS)
        pm = pm @ p
    return min(10_000 * n, MAX_LAG_TERMS)


def lag_horizon(p, xi, tol=DEFAULT_TOL, cap=None) -> int:
    """Smallest ``K >= 1`` with ``||P^K - 1 xi^T||_inf < tol``."""
    p = _matrix(p)
    cap = _term_cap(p, tol) if cap is None else cap
    target = np.outer(np.ones(p.shape[0]), xi)
    pk = p.copy()
    env = np.inf
    for k in range(1, cap + 1):
        env = np.abs(pk - target).sum(axis=1).max()
        if env < tol:
            return k
        pk = pk @ p
    raise SeriesDecayError(env, cap, tol)


def asymptotic_variance_series(c: InducedChain, xi, mean, tol=DEFAULT_TOL) -> float:
    """Variance plus twice the summed lag autocovariances under stationarity."""
    p = c.p
    rbar = c.r - mean
    k_max = lag_horizon(p, xi, tol)
    left = xi * rbar
    total = float(np.dot(left, rbar))
    v = rbar
    acc = 0.0
    for _ in range(k_max):
        v = p @ v
        acc += float(np.dot(left, v))
    return _clamp_variance(total + 2.0 * acc)


def reversed_kernel(p, xi) -> np.ndarray:
    """Time reversal ``P*(x, y) = xi(y) P(y, x) / xi(x)``."""
    p = _matrix(p)
    return (p.T * xi[None, :]) / xi[:, None]


def varrho_terms(p, xi, rbar, n_lags, xi_reverse=None):
    """The three lag sums ``(rho1, rho2, rho3)`` truncated at ``n_lags``.

    ``rho2`` runs over both time directions (negative lags through the
    reversed chain, built from ``xi_reverse`` if given); ``rho3`` factorises as
    ``6 (xi*rbar)^T (sum_i P^i) [rbar * sum_j P^j rbar]``.
    """
    p = _matrix(p)
    pstar = reversed_kernel(p, xi if xi_reverse is None else xi_reverse)
    rho1 = float(np.dot(xi, rbar**3))

    sq_weight = xi * rbar**2
    fwd = np.zeros_like(rbar)
    bwd = np.zeros_like(rbar)
    v_f = rbar
    v_b = rbar
    for _ in range(n_lags):
        v_f = p @ v_f
        v_b = pstar @ v_b
        fwd += v_f
        bwd += v_b
    rho2 = 3.0 * float(np.dot(sq_weight, fwd + bwd))

    u = rbar * fwd
    lin_weight = xi * rbar
    acc = 0.0
    v = u
    for _ in range(n_lags):
        v = p @ v
        acc += float(np.dot(lin_weight, v))
    rho3 = 6.0 * acc
    return rho1, rho2, rho3


def varrho(c: InducedChain, xi, mean, tol=DEFAULT_TOL, centered=True, envelope_xi=None) -> float:
    """Third-order constant ``rho1 + rho2 + rho3`` of the Edgeworth correction.

    With ``centered=False`` the raw rewards enter the lag sums, which only
    converge when ``mean == 0``; otherwise the value depends on truncation.
    ``envelope_xi`` is the exact stationary law used for the truncation rule
    when ``xi`` is itself an approximation.
    """
    p = c.p
    env_xi = xi if envelope_xi is None else envelope_xi
    n_lags = max(lag_horizon(p, env_xi, tol), lag_horizon(reversed_kernel(p, env_xi), env_xi, tol))
    rbar = c.r - mean if centered else np.asarray(c.r, dtype=float)
    if not centered and abs(mean) > 1e-12:
        warnings.warn(
            "uncentered varrho with nonzero mean: lag sums do not converge, "
            f"value reflects truncation at {n_lags} lags",
            RuntimeWarning,
            stacklevel=2,
        )
    return float(sum(varrho_terms(p, xi, rbar, n_lags, xi_reverse=env_xi)))


def analyze_chain(c: InducedChain, tol=DEFAULT_TOL, centered=True) -> ChainSolution:
    """Run stationary -> Poisson -> variance -> varrho on an ergodic chain."""
    xi = stationary_distribution(c)
    mean = float(np.dot(xi, c.r))
    fk, rhat = solve_poisson(c, xi, mean)
    sigma2 = asymptotic_variance(c, xi, rhat)
    if is_lattice(c.r):
        warnings.warn(
            "state rewards lie on an arithmetic grid; S_T is lattice-valued and the "
            "Edgeworth correction is only approximate",
            LatticeRewardWarning,
            stacklevel=2,
        )
    rho = varrho(c, xi, mean, tol=tol, centered=centered)
    return ChainSolution(
        xi=xi,
        mean=mean,
        rhat=rhat,
        sigma2=sigma2,
        varrho=rho,
        tau1=ergodicity_coefficient(c.p),
        sigma_min_h=fk.sigma_min_h,
    )
