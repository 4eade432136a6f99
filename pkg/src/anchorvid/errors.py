"""Shared exception types.

The CLI maps these onto process exit codes, so raising the right class
matters more than the message text: ConfigError -> 2, TraceMismatchError
-> 3, InvariantError -> 4, OSError and tensor format errors -> 5.
"""


class ConfigError(ValueError):
    """Invalid configuration values or flag combinations."""


class TraceMismatchError(RuntimeError):
    """A stored generation trace does not match the requested run."""


class MissingLatentError(TraceMismatchError):
    """A trace lacks the latent required at some timestep."""


class InvariantError(AssertionError):
    """A runtime self-check (fast invariant suite) failed."""
