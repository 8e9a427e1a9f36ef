"""Edgeworth-corrected distribution of the cumulative reward and the risk measures built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect
from scipy.special import ndtr

from .errors import QuantileError

VALUE_AT_RISK = "value_at_risk"
MEAN_VARIANCE = "mean_variance"
RISK_KINDS = (VALUE_AT_RISK, MEAN_VARIANCE)

BRACKET_WIDTH = 10.0
MONOTONE_ATOL = 1e-12

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _density(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(z))


@dataclass(frozen=True)
class EdgeworthCdf:
    """Two-term expansion of the CDF of ``(S_T - T mean) / (sigma sqrt(T))``."""

    mean: float
    sigma: float
    varrho: float
    rhat_x0: float
    horizon: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if int(self.horizon) < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")

    @property
    def scale(self) -> float:
        """``sigma * sqrt(T)``: maps the normalised coordinate to sums."""
        return self.sigma * math.sqrt(self.horizon)

    def raw(self, z):
        """Unclamped expansion at normalised ``z``."""
        z = np.asarray(z, dtype=float)
        a = self.varrho / (6.0 * self.sigma**2)
        corr = _density(z) / self.scale * (a * (1.0 - z * z) - self.rhat_x0)
        return ndtr(z) + corr

    def __call__(self, z):
        out = np.clip(self.raw(z), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def normalize(self, y):
        """``h(y) = (y - T mean) / (sigma sqrt(T))``."""
        return (np.asarray(y, dtype=float) - self.horizon * self.mean) / self.scale

    def decreasing_intervals(self, lo=-BRACKET_WIDTH, hi=BRACKET_WIDTH):
        """Subintervals of ``[lo, hi]`` where the unclamped expansion decreases.

        The derivative is ``density(z) * (1 + k (a z^3 + (b - 3a) z))`` with
        ``k = 1/(sigma sqrt T)``, ``a = varrho/(6 sigma^2)``, ``b = rhat(x0)``.
        """
        k = 1.0 / self.scale
        a = self.varrho / (6.0 * self.sigma**2)
        coeffs = [k * a, 0.0, k * (self.rhat_x0 - 3.0 * a), 1.0]
        # Drop leading terms below rounding level on the whole bracket; a tiny
        # (even subnormal) leading coefficient otherwise overflows np.roots.
        width = max(abs(lo), abs(hi), 1.0)
        while len(coeffs) > 1 and abs(coeffs[0]) * width ** (len(coeffs) - 1) <= 1e-15:
            coeffs = coeffs[1:]
        roots = np.roots(coeffs) if len(coeffs) > 1 else np.array([])
        cuts = sorted(
            float(z.real) for z in roots if abs(z.imag) < 1e-12 and lo < z.real < hi
        )
        edges = [lo, *cuts, hi]
        poly = np.poly1d(coeffs)
        return [
            (z1, z2)
            for z1, z2 in zip(edges[:-1], edges[1:])
            if poly(0.5 * (z1 + z2)) < 0.0
        ]

    def check_monotone(self, lo=-BRACKET_WIDTH, hi=BRACKET_WIDTH, atol=MONOTONE_ATOL):
        """Raise QuantileError if the clamped CDF drops by more than ``atol`` on ``[lo, hi]``."""
        for z1, z2 in self.decreasing_intervals(lo, hi):
            drop = self(z1) - self(z2)
            if drop > atol:
                raise QuantileError(
                    f"expansion is not monotone on [{z1:.3f}, {z2:.3f}] (drop {drop:.3e}); "
                    "parameters too extreme for the two-term correction"
                )


def cdf(e: EdgeworthCdf, y) -> float:
    """Clamped expansion at the normalised coordinate ``y``."""
    return e(y)


def var_quantile(e: EdgeworthCdf, lam: float, xtol=1e-9):
    """Right-continuous ``lam``-quantile of ``S_T`` under the expansion.

    Returns ``(q, -q)``: the quantile itself and the value-at-risk in the
    ``VaR = -q`` sign convention.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    e.check_monotone()
    centre = e.horizon * e.mean
    lo = centre - BRACKET_WIDTH * e.scale
    hi = centre + BRACKET_WIDTH * e.scale

    def excess(y):
        return e(e.normalize(y)) - lam

    if excess(lo) > 0.0 or excess(hi) <= 0.0:
        raise QuantileError(f"G_T does not cross {lam} on [{lo:.6g}, {hi:.6g}]")
    q = bisect(excess, lo, hi, xtol=xtol, maxiter=400)
    return q, -q


def cdf_grid(e: EdgeworthCdf, n_points=401, width=4.0):
    """``(y, G_T(h(y)))`` on ``[T mean - width sigma sqrt T, T mean + width sigma sqrt T]``."""
    centre = e.horizon * e.mean
    y = np.linspace(centre - width * e.scale, centre + width * e.scale, n_points)
    return y, np.asarray(e(e.normalize(y)))


@dataclass(frozen=True)
class RiskSpec:
    kind: str
    lam: float

    def __post_init__(self):
        if self.kind not in RISK_KINDS:
            raise ValueError(f"risk kind must be one of {RISK_KINDS}, got {self.kind!r}")
        if self.kind == VALUE_AT_RISK and not 0.0 < self.lam < 1.0:
            raise ValueError(f"value-at-risk lambda must lie in (0, 1), got {self.lam}")
        if self.kind == MEAN_VARIANCE and not self.lam >= 0.0:
            raise ValueError(f"mean-variance lambda must be >= 0, got {self.lam}")


def mean_variance(sol, lam) -> float:
    """``-mean + lam * sigma2``."""
    return -float(sol.mean) + float(lam) * float(sol.sigma2)


def edgeworth_from_solution(sol, x0, horizon) -> EdgeworthCdf:
    if not sol.sigma2 > 0:
        raise ValueError(
            f"asymptotic variance {sol.sigma2} is not positive; value-at-risk is undefined"
        )
    return EdgeworthCdf(
        mean=float(sol.mean),
        sigma=math.sqrt(sol.sigma2),
        varrho=float(sol.varrho),
        rhat_x0=float(sol.rhat[x0]),
        horizon=int(horizon),
    )


def risk_report(sol, x0, spec: RiskSpec, horizon) -> dict:
    """Risk value plus the quantities behind it, as a JSON-ready record."""
    rec = {
        "risk_kind": spec.kind,
        "lambda": float(spec.lam),
        "mean": float(sol.mean),
        "sigma2": float(sol.sigma2),
        "varrho": float(sol.varrho),
        "horizon": int(horizon),
        "x0": int(x0),
    }
    if spec.kind == VALUE_AT_RISK:
        q, var = var_quantile(edgeworth_from_solution(sol, x0, horizon), spec.lam)
        rec.update(q_lambda=q, var=var, risk=var)
    else:
        rec.update(q_lambda=None, var=None, risk=mean_variance(sol, spec.lam))
    return rec


def evaluate_risk(sol, x0, spec: RiskSpec, horizon) -> float:
    """Risk of ``S_T``: ``-q_lambda`` for value-at-risk, ``-mean + lam sigma2`` otherwise."""
    if spec.kind == MEAN_VARIANCE:
        return mean_variance(sol, spec.lam)
    _, var = var_quantile(edgeworth_from_solution(sol, x0, horizon), spec.lam)
    return var
