from __future__ import annotations

from typing import List, Optional


class ScoutError(RuntimeError):
    """Base class for every failure raised by the toolkit."""


class ConfigError(ScoutError):
    """
    Invalid configuration document or configuration value.

    Attributes:
        violations: One message per problem, addressed by field path or line.
    """

    def __init__(self, violations: List[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations: List[str] = list(violations)
        super().__init__("; ".join(self.violations))


class GridBoundsError(ScoutError, IndexError):
    """A block id or cell lies outside the grid."""


class InvalidViewError(ScoutError, ValueError):
    """A camera view whose center or zoom is not valid for the world."""


class NoHypothesisError(ScoutError, ValueError):
    """No object hypothesis is left to reason about."""


class BeliefError(ScoutError, ValueError):
    """A belief that violates nonnegativity or normalization."""


class ImpossibleObservationError(ScoutError):
    """
    The realized observation has zero total likelihood under the belief.

    This only happens when the configured observation model assigns zero
    probability to something that actually occurred.
    """


class ModelError(ScoutError, ValueError):
    """A POMDP model that cannot be built or fails its consistency checks."""


class CassandraFormatError(ScoutError, ValueError):
    """Malformed or unsupported `.pomdp` document."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SearchBudgetError(ScoutError):
    """Exhaustive search would expand more nodes than the configured budget."""
