"""Exception hierarchy shared by the library and the CLI."""


class MiscibleError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(MiscibleError, ValueError):
    pass


class SingularVelocityError(MiscibleError, ValueError):
    """The velocity Jacobian was requested at v = 0 without regularization."""


class CompatibilityError(MiscibleError, ValueError):
    """A Neumann problem was posed with a right-hand side of nonzero mean."""


class IterationLimitError(MiscibleError, RuntimeError):
    pass


class ConfigError(MiscibleError, ValueError):
    """Bad configuration; ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class FormatError(MiscibleError, ValueError):
    pass


class StagnationError(MiscibleError, RuntimeError):
    """The line search could not find a decrease; carries the partial report."""

    def __init__(self, message, report=None, control=None):
        super().__init__(message)
        self.report = report
        self.control = control
