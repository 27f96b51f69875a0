"""Exception taxonomy shared by all cfbench modules."""


class CfbenchError(Exception):
    """Base class for all cfbench failures."""


class SchemaError(CfbenchError):
    """CSV schema is missing mandatory columns or maps to absent headers."""


class DataError(CfbenchError):
    """Input data violates a structural precondition (names the offending row)."""


class EmptyTrajectoryError(DataError):
    """Cleaning dropped every sample of a trajectory."""


class SplitError(CfbenchError):
    """Train/test split would leave a partition empty."""


class DomainError(CfbenchError):
    """Numeric argument outside the mathematical domain of an operation."""


class ConfigError(CfbenchError):
    """Invalid run configuration (bounds, budgets, rosters, paths)."""


class ContractError(CfbenchError):
    """Two artifacts that must agree (configs, feature layouts) do not."""


class FitError(CfbenchError):
    """A model fit failed numerically."""


class CollisionError(CfbenchError):
    """Simulated follower gap collapsed to zero; carries the offending step."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"gap collapsed at simulation step {step}")


class EvaluationError(CfbenchError):
    """Backtest produced no windows to score."""


class ProtocolError(CfbenchError):
    """Remote endpoint sent a malformed or out-of-contract message."""


class UnavailableError(CfbenchError):
    """Remote endpoint did not answer within its timeout budget."""


class RemoteModelError(CfbenchError):
    """Remote endpoint answered with an explicit error object."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")
