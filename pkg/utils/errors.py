class SuperbloomError(Exception):
    """Base class for failures that end a command with a specific exit code."""

    exit_code = 1


class ConfigError(SuperbloomError):
    exit_code = 2


class ArtifactError(SuperbloomError):
    """I/O failures and malformed scheme, checkpoint, cache or corpus files."""

    exit_code = 3


class DivergenceError(SuperbloomError):
    """A non-finite activation, loss or gradient."""

    exit_code = 4


class InfeasibleSchemeError(SuperbloomError):
    exit_code = 5
