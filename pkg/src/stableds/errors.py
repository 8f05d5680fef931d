"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: usage errors exit 1, data/contract
problems exit 2, numerical divergence exits 3.
"""


class StabledsError(Exception):
    pass


class ConfigError(StabledsError):
    """Bad configuration or API misuse (shape mismatch, layout mismatch)."""


class DataError(StabledsError):
    """Rejected input data (malformed CSV, inconsistent endpoints)."""


class ContractError(StabledsError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class NumericError(StabledsError):
    """Numerical failure: NaN in a forward pass, division by zero, divergence."""
