"""
Exceptions raised by the delay bandits library
"""


class DelayBanditError(Exception):
    """Base class for every library error"""


class ConfigError(DelayBanditError):
    """Invalid experiment configuration or unusable output location"""


class HorizonExceededError(DelayBanditError):
    """A round was played after the horizon T was reached"""

    def __init__(self, horizon: int):
        super().__init__(f"Horizon of {horizon} rounds already reached")
        self.horizon = horizon


class DecompositionError(DelayBanditError):
    """An action cannot be reconstructed from the spanner members"""

    def __init__(self, residual: float, action_index: int | None = None):
        where = f" (action {action_index})" if action_index is not None else ""
        super().__init__(f"Action outside spanner span{where}: residual norm {residual:.3e}")
        self.residual = residual
        self.action_index = action_index


class CoverError(DelayBanditError):
    """The parameter cover cannot hold its mandatory points"""
