"""Exception and warning types shared across the package."""


class RiskMdpError(Exception):
    """Base class for all errors raised by riskmdp."""


class DimensionError(RiskMdpError, ValueError):
    pass


class NotErgodicError(RiskMdpError):
    """The induced chain is reducible, periodic, or has several unit eigenvalues."""


class SingularKernelError(RiskMdpError):
    """I - P - Xi is (numerically) singular.

    Attributes
    ----------
    sigma_min : float
        Smallest singular value that triggered the failure.
    """

    def __init__(self, sigma_min, message=None):
        self.sigma_min = float(sigma_min)
        super().__init__(
            message or f"fundamental kernel undefined: sigma_min(H) = {self.sigma_min:.3e}"
        )


class SeriesDecayError(RiskMdpError):
    """A lag series did not reach its tolerance before the term cap."""

    def __init__(self, envelope, n_terms, tol):
        self.envelope = float(envelope)
        self.n_terms = int(n_terms)
        self.tol = float(tol)
        super().__init__(
            f"lag series did not decay: envelope {self.envelope:.3e} > tol {self.tol:.1e} "
            f"after {self.n_terms} terms"
        )


class QuantileError(RiskMdpError):
    """Quantile search failed (no crossing, or expansion not monotone on the bracket)."""


class UnvisitedStateError(RiskMdpError):
    def __init__(self, states):
        self.states = [int(s) for s in states]
        super().__init__(f"states never visited, empirical rows undefined: {self.states}")


class NonFiniteObjectiveError(RiskMdpError):
    def __init__(self, theta, value):
        self.theta = theta
        self.value = value
        super().__init__(f"objective returned {value!r} at theta={list(theta)}")


class ConfigError(RiskMdpError):
    """Malformed configuration; ``location`` is the JSON path of the offending key."""

    def __init__(self, location, message):
        self.location = location
        super().__init__(f"{location}: {message}")


class LatticeRewardWarning(UserWarning):
    """Rewards sit on an arithmetic grid; the Edgeworth correction assumes non-lattice sums."""


class DegenerateVarianceWarning(UserWarning):
    """Asymptotic variance is (numerically) zero."""


class ErgodicityLostWarning(UserWarning):
    pass
