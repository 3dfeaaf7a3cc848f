"""Shared exception types for the craftchain package."""


class CraftChainError(Exception):
    """Base class for package-specific failures."""


class ConfigError(CraftChainError):
    """A config file or parameter set is invalid."""


class FormatError(CraftChainError):
    """A binary artifact (dataset or checkpoint) is malformed."""


class CheckpointMismatchError(FormatError):
    """Checkpoint was written for a different network or table spec."""


class DependencyError(CraftChainError):
    """A pipeline stage is missing an artifact produced by an earlier stage."""


class BudgetExhausted(CraftChainError):
    """The environment-interaction frame budget has run out."""


class DegenerateDataError(CraftChainError):
    """Input data cannot support the requested fit (empty split, k too large, ...)."""
