"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad values, unknown keys, inconsistent options."""


class ContractError(ConfigError):
    """A documented precondition was violated by the caller."""


class DimensionError(ContractError):
    """Tensor shapes do not satisfy an operation's requirements."""


class DataError(RuntimeError):
    """Ingestion or dataset problem: unparseable cells, ragged rows, bad labels."""


class NumericalError(RuntimeError):
    """Numerical failure: divergence, non-finite losses, singular systems."""
