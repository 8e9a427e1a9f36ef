"""Risk-objective policy improvement by two-point randomized gradient estimates.

SPSA uses a Rademacher perturbation, SF a Gaussian one; both need exactly two
risk evaluations per iteration.  Iterates follow the projected update
``theta <- clip(theta - a / (A + t) * g, lo, hi)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .chain import analyze_chain
from .edgeworth import RiskSpec, evaluate_risk
from .errors import (
    ErgodicityLostWarning,
    NonFiniteObjectiveError,
    NotErgodicError,
    SeriesDecayError,
    SingularKernelError,
)
from .estimation import evaluate_estimated, TransitionCounts
from .mdp import SoftmaxPolicy, TabularMdp, check_ergodicity, induce_chain
from .montecarlo import simulate_path, stream

SPSA = "spsa"
SF = "sf"
METHODS = (SPSA, SF)
EXACT = "exact"
ESTIMATED = "estimated"
EVAL_MODES = (EXACT, ESTIMATED)

STREAM_PERTURB = 2
MAX_HALVINGS = 5
# A saturated softmax can leave a chain ergodic in exact arithmetic but numerically
# decoupled; all three failures mean the probe left the ergodic region.
_LOST_ERGODICITY = (NotErgodicError, SingularKernelError, SeriesDecayError)


def _checked(objective, theta):
    val = float(objective(theta))
    if not math.isfinite(val):
        raise NonFiniteObjectiveError(np.asarray(theta), val)
    return val


def _two_point(objective, theta, beta, delta, base=None):
    theta = np.asarray(theta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    f0 = _checked(objective, theta) if base is None else base
    f1 = _checked(objective, theta + beta * delta)
    return f1 - f0


def spsa_gradient(objective, theta, beta, delta):
    """``[f(theta + beta delta) - f(theta)] / (beta delta_i)`` for Rademacher ``delta``."""
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.abs(delta) == 1.0):
        raise ValueError("SPSA perturbation entries must be +1 or -1")
    return _two_point(objective, theta, beta, delta) / (beta * delta)


def sf_gradient(objective, theta, beta, delta):
    """``delta_i / beta * [f(theta + beta delta) - f(theta)]`` for Gaussian ``delta``."""
    delta = np.asarray(delta, dtype=float)
    diff = _two_point(objective, theta, beta, delta)
    return delta / beta * diff


def project(theta, lo, hi) -> np.ndarray:
    """Nearest point of the box ``[lo, hi]``: a coordinate-wise clamp."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise ValueError("bounds must satisfy lo <= hi")
    return np.clip(np.asarray(theta, dtype=float), lo, hi)


@dataclass(frozen=True)
class ImprovementConfig:
    """Settings of the projected stochastic-approximation loop.

    ``n_samples`` and ``delta`` only matter for estimated evaluation: the
    trajectory length behind each kernel estimate and its confidence level.
    ``patience`` is the number of consecutive iterations whose move must stay
    within ``epsilon_stop`` before stopping; 1 stops at the first small move,
    which SF's Gaussian perturbations trigger spuriously when ``|delta|`` is tiny.
    """

    method: str = SPSA
    beta: float = 0.1
    step_a: float = 1.0
    step_A: float = 10.0
    epsilon_stop: float = 1e-4
    max_iters: int = 2000
    seed: int = 0
    n_samples: int = 100_000
    delta: float = 0.05
    patience: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.epsilon_stop >= 0:
            raise ValueError("epsilon_stop must be non-negative")
        if int(self.max_iters) < 0:
            raise ValueError("max_iters must be non-negative")
        if int(self.seed) < 0:
            raise ValueError("seed must be non-negative")
        if int(self.patience) < 1:
            raise ValueError("patience must be >= 1")
        if int(self.n_samples) < 1:
            raise ValueError("n_samples must be positive")
        check_schedule(self.step_a, self.step_A)

    def step(self, t: int) -> float:
        return self.step_a / (self.step_A + t)


def check_schedule(a, big_a) -> dict:
    """Confirm ``a / (A + t)``, ``t >= 1``, is a valid Robbins-Monro schedule.

    For ``a > 0`` and ``A > -1`` every step is positive and the terms are
    ``Theta(1/t)``: the sum diverges like the harmonic series while the sum
    of squares converges like the ``p = 2`` series.
    """
    if not a > 0:
        raise ValueError(f"step_a must be positive, got {a}")
    if not big_a > -1:
        raise ValueError(f"step_A must exceed -1 so every step is positive, got {big_a}")
    return {"sum_diverges": True, "sum_of_squares_converges": True, "order": 1}


@dataclass(frozen=True)
class IterationRecord:
    t: int
    theta: tuple
    risk: float
    grad: tuple
    step: float
    beta: float


@dataclass
class ImprovementTrace:
    records: list = field(default_factory=list)
    theta_star: np.ndarray | None = None
    converged: bool = False
    initial_risk: float = float("nan")
    final_risk: float = float("nan")
    probe_failures: list = field(default_factory=list)

    @property
    def risks(self) -> np.ndarray:
        return np.array([rec.risk for rec in self.records])

    @property
    def n_iters(self) -> int:
        return len(self.records)


class RiskObjective:
    """``theta -> risk`` for one MDP, policy family and risk measure.

    Exact mode evaluates the induced chain in closed form; estimated mode
    simulates ``n_samples`` transitions, estimates the kernel and evaluates
    that.  ``path_index`` selects the trajectory stream.
    """

    def __init__(self, mdp: TabularMdp, pol: SoftmaxPolicy, spec: RiskSpec, mode=EXACT,
                 seed=0, n_samples=100_000, delta=0.05, x0=0):
        if mode not in EVAL_MODES:
            raise ValueError(f"eval mode must be one of {EVAL_MODES}, got {mode!r}")
        self.mdp = mdp
        self.pol = pol
        self.spec = spec
        self.mode = mode
        self.seed = int(seed)
        self.n_samples = int(n_samples)
        self.delta = float(delta)
        self.x0 = int(x0)
        self.path_index = 0

    def chain(self, theta):
        c = induce_chain(self.mdp, self.pol.with_theta(theta), self.x0)
        erg = check_ergodicity(c)
        if not erg.ergodic:
            raise NotErgodicError(f"induced chain not ergodic at theta={list(np.asarray(theta))}")
        return c

    def __call__(self, theta) -> float:
        c = self.chain(theta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if self.mode == EXACT:
                sol = analyze_chain(c)
            else:
                path = simulate_path(c, self.n_samples, self.seed, self.path_index)
                counts = TransitionCounts.from_path(path, c.n_states)
                sol = evaluate_estimated(counts, c.r, self.x0, delta=self.delta).solution
        return evaluate_risk(sol, self.x0, self.spec, self.mdp.horizon)


def perturbation(method, dim, seed, t) -> np.ndarray:
    """Perturbation vector for iteration ``t``, from its own stream."""
    gen = stream(seed, t, STREAM_PERTURB)
    if method == SPSA:
        return gen.choice(np.array([-1.0, 1.0]), size=dim)
    return gen.standard_normal(dim)


def improve(mdp: TabularMdp, pol: SoftmaxPolicy, spec: RiskSpec, cfg: ImprovementConfig,
            eval_mode=EXACT, x0=0) -> ImprovementTrace:
    """Projected SPSA/SF descent on the risk of the induced chain.

    Each iteration draws a fresh perturbation, evaluates the risk at the
    current iterate and at the probe (fresh trajectories in estimated mode),
    and stops once ``||theta_t - theta_{t-1}||_inf <= epsilon_stop`` has held
    for ``cfg.patience`` consecutive iterations.  A probe
    at which the chain is not ergodic is retried with half the radius, at most
    ``MAX_HALVINGS`` times; numerically singular probes count as non-ergodic.
    """
    objective = RiskObjective(mdp, pol, spec, eval_mode, cfg.seed, cfg.n_samples, cfg.delta, x0)
    lo, hi = pol.lo, pol.hi
    theta = project(pol.theta, lo, hi)
    objective.chain(theta)  # the starting chain must be ergodic
    trace = ImprovementTrace(theta_star=theta.copy())
    estimator = spsa_gradient if cfg.method == SPSA else sf_gradient
    quiet = 0

    for t in range(1, int(cfg.max_iters) + 1):
        delta = perturbation(cfg.method, theta.size, cfg.seed, t)
        objective.path_index = 2 * t
        risk = _checked(objective, theta)
        if t == 1:
            trace.initial_risk = risk
        beta = cfg.beta
        for attempt in range(MAX_HALVINGS + 1):
            objective.path_index = 2 * t + 1
            try:
                grad = estimator(lambda th: _probe(objective, th, theta, risk), theta, beta, delta)
                break
            except _LOST_ERGODICITY as exc:
                trace.probe_failures.append((t, beta, type(exc).__name__))
                warnings.warn(
                    f"iteration {t}: chain not ergodic at probe (beta={beta:g}); halving",
                    ErgodicityLostWarning,
                    stacklevel=2,
                )
                if attempt == MAX_HALVINGS:
                    raise
                beta *= 0.5
        step = cfg.step(t)
        new_theta = project(theta - step * grad, lo, hi)
        trace.records.append(
            IterationRecord(t, tuple(theta.tolist()), risk, tuple(grad.tolist()), step, beta)
        )
        moved = float(np.max(np.abs(new_theta - theta)))
        theta = new_theta
        quiet = quiet + 1 if moved <= cfg.epsilon_stop else 0
        if quiet >= cfg.patience:
            trace.converged = True
            break

    trace.theta_star = theta
    objective.path_index = 0
    trace.final_risk = _checked(objective, theta)
    if not trace.records:
        trace.initial_risk = trace.final_risk
    return trace


def _probe(objective, th, theta, base_risk):
    # The estimators evaluate the base point first; reuse the iteration's value.
    if np.array_equal(th, theta):
        return base_risk
    return objective(th)
