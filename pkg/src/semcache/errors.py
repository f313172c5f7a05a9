"""Exception types shared across the package."""


class SemcacheError(Exception):
    """Base class for all library-specific failures."""


class BudgetExceededError(SemcacheError):
    """Exhaustive enumeration would exceed the configured evaluation budget."""


class DegenerateInstanceError(SemcacheError):
    """The instance does not admit a well-defined curvature ratio."""


class GenerationError(SemcacheError):
    """A workload spec cannot produce a valid query space."""


class FormatError(SemcacheError):
    """A workload / dataset file violates its schema."""


class ConfigError(SemcacheError):
    """Invalid experiment configuration (unknown variant, bad parameter)."""
