class DhsDeepoError(Exception):
    """Base class for all library errors."""


class NotSchurStable(DhsDeepoError):
    pass


class NonSymmetricInput(DhsDeepoError):
    pass


class NotStabilizable(DhsDeepoError):
    pass


class InsufficientData(DhsDeepoError):
    pass


class RankDeficientData(DhsDeepoError):
    """Raised when a data matrix needed for inversion is (numerically) singular.

    The condition number that triggered the failure is kept on ``cond``.
    """

    def __init__(self, msg, cond=float("inf")):
        super().__init__(msg)
        self.cond = cond


class RankDeficient(DhsDeepoError):
    pass


class FlowImbalance(DhsDeepoError):
    pass


class DisconnectedNetwork(DhsDeepoError):
    pass


class StepTooLarge(DhsDeepoError):
    pass


class DimensionMismatch(DhsDeepoError):
    pass


class Infeasible(DhsDeepoError):
    pass


class StepRejected(DhsDeepoError):
    pass


class NonFinite(DhsDeepoError):
    pass


class DivergenceDetected(DhsDeepoError):
    pass


class ConfigError(DhsDeepoError):
    pass
