"""Exception types shared across the package.

All of these derive from ValueError so callers that only care about
"bad input" can catch one base class, while the CLI maps the subtypes
to distinct exit codes.
"""


class GraphStructureError(ValueError):
    """A graph or network references nodes/segments that do not exist,
    or violates a structural invariant (duplicate ids, bad shapes)."""


class InsufficientDataError(ValueError):
    """Not enough observations to produce a histogram or fit a model."""


class DataLoadError(ValueError):
    """A file required to build a dataset is missing or malformed."""


class ConfigurationError(ValueError):
    """Invalid parameter combination (bad cluster count, batch count
    that does not divide the cluster count, dropout rate >= 1, ...)."""


class TrainingError(RuntimeError):
    """Training diverged or produced non-finite losses/parameters."""
