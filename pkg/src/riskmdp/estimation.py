"""Policy evaluation when the induced kernel must be estimated from trajectories.

Empirical kernel with an L1 concentration radius, stationary law by power
iteration, the estimated Poisson equation, and the computable error
certificate (``varpi``, ``alpha1``, ``alpha2``, conditions C1/C2, ``kappa``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .chain import (
    DEFAULT_TOL,
    SIGMA_MIN_FLOOR,
    _clamp_variance,
    ergodicity_coefficient,
    stationary_distribution,
    varrho,
)
from .errors import SingularKernelError, UnvisitedStateError
from .mdp import InducedChain

N2_CAP = 1_000_000


@dataclass(frozen=True, eq=False)
class TransitionCounts:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"counts must be square, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def visits(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def n_states(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def from_path(cls, states, n_states) -> "TransitionCounts":
        states = np.asarray(states, dtype=np.int64)
        if states.size and (states.min() < 0 or states.max() >= n_states):
            raise ValueError(f"path visits states outside 0..{n_states - 1}")
        pairs = states[:-1] * n_states + states[1:]
        counts = np.bincount(pairs, minlength=n_states * n_states)
        return cls(counts.reshape(n_states, n_states))


@dataclass(frozen=True, eq=False)
class KernelEstimate:
    p_hat: np.ndarray
    eps1: float
    delta1: float


def l1_radius(visits, n_states, delta) -> np.ndarray:
    """Per-row radius with ``P(||p_hat(x,.) - p(x,.)||_1 > radius) <= delta / |X|``."""
    visits = np.asarray(visits, dtype=float)
    return np.sqrt(2.0 / visits * (n_states * math.log(2.0) + math.log(n_states / delta)))


def estimate_kernel(counts: TransitionCounts, delta: float) -> KernelEstimate:
    """Empirical transition frequencies and a sup-norm radius holding w.p. ``1 - delta``."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    visits = counts.visits
    unvisited = np.flatnonzero(visits == 0)
    if unvisited.size:
        raise UnvisitedStateError(unvisited)
    p_hat = counts.counts / visits[:, None]
    eps1 = float(l1_radius(visits, counts.n_states, delta).max())
    return KernelEstimate(p_hat, eps1, float(delta))


def power_stationary(p_hat, x0: int, n2: int) -> np.ndarray:
    """Row ``x0`` of ``p_hat ** n2``."""
    p_hat = np.asarray(p_hat, dtype=float)
    if n2 < 0:
        raise ValueError("n2 must be non-negative")
    return np.linalg.matrix_power(p_hat, int(n2))[x0].copy()


def converged_depth(p_hat, x0: int, tol=1e-13, cap=N2_CAP) -> int:
    """Smallest ``n`` with ``||p_hat^n(x0, .) - xi||_1 <= tol`` for the exact stationary ``xi``."""
    p_hat = np.asarray(p_hat, dtype=float)
    xi = stationary_distribution(p_hat)
    row = np.zeros(p_hat.shape[0])
    row[x0] = 1.0
    for n in range(cap + 1):
        if np.abs(row - xi).sum() <= tol:
            return n
        row = row @ p_hat
    return cap


@dataclass(frozen=True)
class EstimationCertificate:
    """Bound constants for one power-iteration depth ``n2``.

    ``c1_ok``/``c2_ok`` report the two sufficient conditions for
    ``P(|sigma2_est - sigma2| <= epsilon) >= 1 - 38 delta1``; ``limiting``
    names the first failed requirement when the certificate is infeasible.
    """

    n_states: int
    eps1: float
    delta1: float
    tau1_hat: float
    n2: int
    m_const: float
    tau_geo: float
    c: float
    epsilon: float
    lambda_split: float
    varpi_tilde: float
    alpha1: float
    alpha2: float
    c1_lhs: float
    c2_lhs: float
    varsigma_tilde: float
    margin_ok: bool
    c1_ok: bool
    c2_ok: bool
    limiting: str | None
    risk_lambda: float | None = None
    kappa: float | None = None

    @property
    def feasible(self) -> bool:
        return self.margin_ok and self.c1_ok and self.c2_ok

    def to_dict(self) -> dict:
        out = {}
        for key, val in asdict(self).items():
            if isinstance(val, float) and not math.isfinite(val):
                val = None
            out[key] = val
        out["feasible"] = self.feasible
        return out


def certificate_at(
    n2, *, eps1, delta1, tau1_hat, m_const, tau_geo, c, epsilon, lambda_split, n_states,
    risk_lambda=None,
) -> EstimationCertificate:
    """Evaluate every bound constant at depth ``n2``."""
    nx = float(n_states)
    sx = math.sqrt(nx)
    denom = 1.0 - tau1_hat - eps1
    geo = 2.0 * m_const * tau_geo**n2
    inf = float("inf")

    limiting = None
    if denom <= 0.0:
        limiting = "1 - tau1_hat - eps1 <= 0"
    elif not tau_geo < 1.0:
        limiting = "tau_geo >= 1"
    elif not c > 0.0:
        limiting = "c <= 0"

    varpi = sx * (eps1 + eps1 / denom + geo) if denom > 0.0 else inf
    margin = limiting is None and c > varpi
    if limiting is None and not margin:
        limiting = "c <= varpi_tilde"

    if margin:
        gap = c - varpi
        shared = (nx + 1.0) * varpi / gap + sx * (varpi - eps1 * sx)
        alpha1 = eps1 * sx * (nx + 1.0) / gap + nx**1.5 / c * shared
        alpha2 = nx * (nx + 1.0) * (2.0 * c - varpi) / (c * gap)
        c1_lhs = nx * (nx + 1.0) ** 3 * (varpi - sx * eps1) / gap**2
        c2_lhs = alpha2 * nx / c * shared + alpha1 * alpha2 * nx
        varsigma = sx * (nx + 1.0) * varpi / (c * gap) + nx / c * (varpi - eps1 * sx)
    else:
        alpha1 = alpha2 = c1_lhs = c2_lhs = varsigma = inf

    c1_ok = bool(margin and c1_lhs <= lambda_split * epsilon)
    c2_ok = bool(margin and c2_lhs <= (1.0 - lambda_split) * epsilon)
    if limiting is None and not c1_ok:
        limiting = "C1"
    elif limiting is None and not c2_ok:
        limiting = "C2"

    kappa = None
    if risk_lambda is not None and denom > 0.0:
        kappa = geo + eps1 / denom + risk_lambda * epsilon
    return EstimationCertificate(
        n_states=int(n_states), eps1=float(eps1), delta1=float(delta1), tau1_hat=float(tau1_hat),
        n2=int(n2), m_const=float(m_const), tau_geo=float(tau_geo), c=float(c),
        epsilon=float(epsilon), lambda_split=float(lambda_split), varpi_tilde=float(varpi),
        alpha1=float(alpha1), alpha2=float(alpha2), c1_lhs=float(c1_lhs), c2_lhs=float(c2_lhs),
        varsigma_tilde=float(varsigma), margin_ok=bool(margin), c1_ok=c1_ok, c2_ok=c2_ok,
        limiting=limiting, risk_lambda=None if risk_lambda is None else float(risk_lambda),
        kappa=kappa,
    )


def choose_n2(
    *, eps1, delta1, tau1_hat, m_const, tau_geo, c, epsilon, lambda_split, n_states,
    risk_lambda=None, cap=N2_CAP,
):
    """Smallest depth ``n2 >= 1`` at which the certificate is feasible.

    Every constant grows with ``varpi_tilde``, which shrinks in ``n2``, so
    feasibility is monotone: doubling finds a feasible depth, bisection the
    first one.  Returns ``(n2, certificate)``; when nothing up to ``cap`` is
    feasible, ``n2`` is None and the certificate is evaluated at ``cap``.
    """
    if not 0.0 < lambda_split < 1.0:
        raise ValueError(f"lambda_split must lie in (0, 1), got {lambda_split}")
    if not epsilon > 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    kw = dict(
        eps1=eps1, delta1=delta1, tau1_hat=tau1_hat, m_const=m_const, tau_geo=tau_geo, c=c,
        epsilon=epsilon, lambda_split=lambda_split, n_states=n_states, risk_lambda=risk_lambda,
    )

    def at(n):
        return certificate_at(n, **kw)

    cert = at(1)
    if cert.feasible:
        return 1, cert
    if cert.limiting in ("1 - tau1_hat - eps1 <= 0", "tau_geo >= 1", "c <= 0") or tau_geo == 0.0:
        return None, cert
    lo, hi = 1, 2
    while hi < cap and not at(hi).feasible:
        lo, hi = hi, min(2 * hi, cap)
    cert = at(hi)
    if not cert.feasible:
        return None, cert
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if at(mid).feasible:
            hi = mid
        else:
            lo = mid
    return hi, at(hi)


def mean_variance_bound(cert: EstimationCertificate, risk_lambda=None) -> float:
    """``2 M tau^n2 + eps1 / (1 - tau1_hat - eps1) + risk_lambda * epsilon``."""
    lam = cert.risk_lambda if risk_lambda is None else risk_lambda
    if lam is None:
        raise ValueError("risk_lambda is required for the mean-variance bound")
    denom = 1.0 - cert.tau1_hat - cert.eps1
    if not denom > 0.0:
        raise ValueError(f"cannot certify: 1 - tau1_hat - eps1 = {denom:.3e} <= 0")
    return 2.0 * cert.m_const * cert.tau_geo**cert.n2 + cert.eps1 / denom + lam * cert.epsilon


@dataclass(frozen=True, eq=False)
class EstimatedSolution:
    p_hat: np.ndarray
    xi_n2: np.ndarray
    mean_n2: float
    rhat_est: np.ndarray
    sigma2_est: float
    varrho_est: float
    n2: int
    sigma_min_h: float

    # Aliases so risk evaluation accepts exact and estimated solutions alike.
    @property
    def mean(self):
        return self.mean_n2

    @property
    def sigma2(self):
        return self.sigma2_est

    @property
    def rhat(self):
        return self.rhat_est

    @property
    def varrho(self):
        return self.varrho_est

    def poisson_residual(self, r) -> float:
        return float(
            np.max(np.abs(self.p_hat @ self.rhat_est - self.rhat_est + r - self.mean_n2))
        )

    def to_dict(self) -> dict:
        return {
            "p_hat": np.asarray(self.p_hat).tolist(),
            "xi_n2": [float(v) for v in self.xi_n2],
            "mean_n2": float(self.mean_n2),
            "rhat_est": [float(v) for v in self.rhat_est],
            "sigma2_est": float(self.sigma2_est),
            "varrho_est": float(self.varrho_est),
            "n2": int(self.n2),
            "sigma_min_h": float(self.sigma_min_h),
        }


def estimate_solution(p_hat, r, x0: int, n2: int, tol=DEFAULT_TOL, centered=True) -> EstimatedSolution:
    """Solve the estimated Poisson equation with ``xi_n2 = p_hat^n2(x0, .)``."""
    p_hat = np.asarray(p_hat, dtype=float)
    r = np.asarray(r, dtype=float)
    n = p_hat.shape[0]
    xi_n2 = power_stationary(p_hat, x0, n2)
    mean = float(np.dot(xi_n2, r))
    h = np.eye(n) - p_hat - np.outer(np.ones(n), xi_n2)
    sigma_min = float(np.linalg.svd(h, compute_uv=False)[-1])
    if not sigma_min > SIGMA_MIN_FLOOR:
        raise SingularKernelError(sigma_min)
    rhat = np.linalg.solve(h, r - mean)
    prhat = p_hat @ rhat
    sigma2 = _clamp_variance(float(np.dot(xi_n2, rhat**2 - prhat**2)))
    xi_exact = stationary_distribution(p_hat)
    rho = varrho(InducedChain(p_hat, r, x0), xi_n2, mean, tol=tol, centered=centered,
                 envelope_xi=xi_exact)
    return EstimatedSolution(p_hat, xi_n2, mean, rhat, sigma2, rho, int(n2), sigma_min)


@dataclass(frozen=True, eq=False)
class EstimationResult:
    kernel: KernelEstimate
    solution: EstimatedSolution
    certificate: EstimationCertificate
    n2_feasible: int | None


def default_c(p_hat, eps1) -> float:
    """Plug-in lower bound on ``sigma_min(H)`` for the unknown true kernel.

    Weyl's inequality with the kernel and stationary-law perturbation bounds:
    ``sigma_min(H_hat) - sqrt(|X|) (eps1 + eps1 / (1 - tau1_hat - eps1))``.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    n = p_hat.shape[0]
    denom = 1.0 - ergodicity_coefficient(p_hat) - eps1
    if denom <= 0.0:
        return 0.0
    xi = stationary_distribution(p_hat)
    h = np.eye(n) - p_hat - np.outer(np.ones(n), xi)
    smin = float(np.linalg.svd(h, compute_uv=False)[-1])
    return smin - math.sqrt(n) * (eps1 + eps1 / denom)


def evaluate_estimated(
    counts: TransitionCounts, r, x0: int, *, delta=0.05, epsilon=0.01, lambda_split=0.5,
    m_const=1.0, tau_geo=None, c=None, risk_lambda=None, tol=DEFAULT_TOL, centered=True,
) -> EstimationResult:
    """Kernel estimate, certificate and estimated solution from transition counts.

    The solution uses ``max(first feasible n2, depth where power iteration has
    converged)``; deeper iteration only tightens every bound, so the
    certificate is re-evaluated at the depth actually used.
    """
    ke = estimate_kernel(counts, delta)
    tau1_hat = ergodicity_coefficient(ke.p_hat)
    tau = tau1_hat if tau_geo is None else float(tau_geo)
    c_val = default_c(ke.p_hat, ke.eps1) if c is None else float(c)
    kw = dict(
        eps1=ke.eps1, delta1=ke.delta1, tau1_hat=tau1_hat, m_const=float(m_const), tau_geo=tau,
        c=c_val, epsilon=float(epsilon), lambda_split=float(lambda_split),
        n_states=counts.n_states, risk_lambda=risk_lambda,
    )
    n2_feasible, _ = choose_n2(**kw)
    n2 = max(n2_feasible or 0, converged_depth(ke.p_hat, x0))
    cert = certificate_at(n2, **kw)
    if not cert.feasible:
        warnings.warn(
            f"estimation certificate infeasible ({cert.limiting}); estimate returned uncertified",
            RuntimeWarning,
            stacklevel=2,
        )
    sol = estimate_solution(ke.p_hat, r, x0, n2, tol=tol, centered=centered)
    return EstimationResult(ke, sol, cert, n2_feasible)
