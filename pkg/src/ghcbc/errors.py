"""Exception types shared across the package."""


class GhcbcError(Exception):
    """Base class for all package errors."""


class DimensionError(GhcbcError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ConfigError(GhcbcError, ValueError):
    """Invalid or unknown configuration value."""


class StateError(GhcbcError, RuntimeError):
    """Stateful component used before initialization or after episode end."""


class ContractError(GhcbcError, ValueError):
    """Caller violated a pairing or ordering contract."""


class DivergenceError(GhcbcError, RuntimeError):
    """Training produced a non-finite loss or gradient."""


class NoPredictionError(GhcbcError, RuntimeError):
    """Temporal ensemble queried on a timestep with no buffered predictions."""


class EpisodeEndError(GhcbcError, RuntimeError):
    """Runtime stepped past the episode horizon."""


class InfeasibleSpecError(GhcbcError, RuntimeError):
    """Task spec admits no valid scene placement or expert plan."""


class DatasetError(GhcbcError, ValueError):
    """Demonstration dataset is missing, malformed, or too short."""
