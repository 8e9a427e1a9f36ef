"""Independent reference computations used only by the tests.

Nothing here calls into riskmdp's numerical routines: stationary laws come
from an eigendecomposition, Poisson solutions from a bordered least-squares
system, lag sums from explicit joint moments, and exact distributions of
S_T from dynamic programming over (state, partial sum).
"""

import math

import numpy as np


def eig_stationary(p):
    w, v = np.linalg.eig(np.asarray(p, dtype=float).T)
    k = np.argmin(np.abs(w - 1.0))
    xi = np.real(v[:, k])
    return xi / xi.sum()


def poisson_lstsq(p, r):
    """Solve (I - P) h = r - phi 1 together with xi^T h = 0 by least squares."""
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    xi = eig_stationary(p)
    phi = float(xi @ r)
    a = np.vstack([np.eye(n) - p, xi[None, :]])
    b = np.concatenate([r - phi, [0.0]])
    h, *_ = np.linalg.lstsq(a, b, rcond=None)
    return xi, phi, h


def variance_bruteforce(p, r, n_lags=None):
    p = np.asarray(p, dtype=float)
    n_lags = _lags_from_spectrum(p) if n_lags is None else n_lags
    xi = eig_stationary(p)
    rbar = r - xi @ r
    total = xi @ rbar**2
    pk = np.eye(len(r))
    for _ in range(n_lags):
        pk = pk @ p
        total += 2 * (xi * rbar) @ pk @ rbar
    return float(total)


def _lags_from_spectrum(p, tol=1e-15):
    mods = np.sort(np.abs(np.linalg.eigvals(p)))
    slem = mods[-2] if len(mods) > 1 else 0.0
    if slem < 1e-12:
        return 4
    return int(math.ceil(math.log(tol) / math.log(slem))) + 20


def varrho_bruteforce(p, r, n_lags=None):
    """Third-order constant from explicit joint moments over all lag pairs ``i + j <= K``."""
    p = np.asarray(p, dtype=float)
    n = len(r)
    n_lags = _lags_from_spectrum(p) if n_lags is None else n_lags
    xi = eig_stationary(p)
    rbar = r - xi @ r
    powers = [np.eye(n)]
    for _ in range(n_lags):
        powers.append(powers[-1] @ p)
    rho1 = float(xi @ rbar**3)
    rho2 = 0.0
    for i in range(1, n_lags + 1):
        # i > 0: E[rbar(X0)^2 rbar(Xi)];  i < 0: E[rbar(X_|i|)^2 rbar(X0)]
        rho2 += np.einsum("x,x,xy,y->", xi, rbar**2, powers[i], rbar)
        rho2 += np.einsum("y,y,yx,x->", xi, rbar, powers[i], rbar**2)
    # E[rbar(X0) rbar(Xi) rbar(X_{i+j})] summed over j via partial sums of P^j rbar.
    partial = np.zeros((n_lags + 1, n))
    for j in range(1, n_lags + 1):
        partial[j] = partial[j - 1] + powers[j] @ rbar
    rho3 = 0.0
    for i in range(1, n_lags + 1):
        left = np.einsum("x,x,xy,y->y", xi, rbar, powers[i], rbar)
        rho3 += left @ partial[n_lags - i]
    return rho1 + 3 * rho2 + 6 * rho3


def exact_sum_distribution(p, r_int, x0, horizon):
    """Exact law of S_T = sum_{t<T} r(x_t) for integer rewards, by DP."""
    p = np.asarray(p, dtype=float)
    r_int = np.asarray(r_int, dtype=int)
    n = len(r_int)
    span = int(np.abs(r_int).max()) * horizon
    width = 2 * span + 1
    mass = np.zeros((n, width))
    mass[x0, span + r_int[x0]] = 1.0
    for _ in range(horizon - 1):
        nxt = np.zeros_like(mass)
        for x in range(n):
            for y in range(n):
                if p[x, y] > 0:
                    nxt[y] += p[x, y] * np.roll(mass[x], r_int[y])
        mass = nxt
    support = np.arange(-span, span + 1)
    return support, mass.sum(axis=0)


def cumulants_from_pmf(support, pmf):
    m1 = float(support @ pmf)
    d = support - m1
    return m1, float(d**2 @ pmf), float(d**3 @ pmf)


def certificate_scan(eps1, tau1, m_const, tau_geo, c, epsilon, lam, nx, n_max=5000):
    """Linear scan for the first n2 meeting both conditions.

    C2 is evaluated in the factored form |X| (theta + alpha1 alpha2) with
    theta = alpha2 / c [ (|X|+1) varpi / (c - varpi) + sqrt|X| (varpi - eps1 sqrt|X|) ].
    """
    sx = math.sqrt(nx)
    for n2 in range(1, n_max + 1):
        varpi = sx * (eps1 + eps1 / (1 - tau1 - eps1) + 2 * m_const * tau_geo**n2)
        if not c > varpi:
            continue
        g = c - varpi
        a1 = eps1 * sx * (nx + 1) / g + nx**1.5 / c * (
            varpi * (nx + 1) / g + sx * (varpi - eps1 * sx)
        )
        a2 = nx * (nx + 1) * (2 * c - varpi) / (c * g)
        lhs1 = nx * (nx + 1) ** 3 * (varpi - sx * eps1) / g**2
        theta = a2 / c * ((nx + 1) * varpi / g + sx * (varpi - eps1 * sx))
        lhs2 = nx * (theta + a1 * a2)
        if lhs1 <= lam * epsilon and lhs2 <= (1 - lam) * epsilon:
            return n2, lhs1, lhs2
    return None, None, None
