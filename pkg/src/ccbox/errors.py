"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class InvariantError(ValueError):
    """A data invariant (symmetry, PSD, positivity, ...) is violated."""


class SolverError(RuntimeError):
    """The NLP solver hit a non-recoverable numerical failure."""


class ScenarioError(ValueError):
    """A scenario file failed to parse or validate.

    ``key`` is a dotted path into the document and ``line`` the 1-based
    source line when it could be located.
    """

    def __init__(self, message, key=None, line=None, source=None):
        self.key = key
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:"
        if where:
            where += " "
        if key is not None:
            where += f"'{key}': "
        super().__init__(where + message)
