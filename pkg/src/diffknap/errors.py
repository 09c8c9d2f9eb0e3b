"""Exception hierarchy.

Everything raised on purpose by the package derives from :class:`DiffKnapError`
so callers (and the CLI) can map failures to exit codes.
"""


class DiffKnapError(Exception):
    """Base class for all package errors."""


class ValidationError(DiffKnapError, ValueError):
    """Input data violates a documented invariant."""


class ConfigurationError(ValidationError):
    """Invalid solver configuration (e.g. a non-positive temperature)."""


class ContractError(DiffKnapError):
    """Operation called outside its contract, e.g. sampling from the hard DP."""


class EnumerationLimitError(DiffKnapError):
    """Brute-force enumeration refused because the instance is too large."""
