"""Exception hierarchy shared across the toolkit.

The CLI maps these onto stable exit codes: plain I/O failures are 1,
:class:`SchemaError` is 2, :class:`ParameterError` (and subclasses) is 3.
"""


class SonolabError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(SonolabError):
    """A user-supplied parameter or configuration value is invalid."""


class SchemaError(SonolabError):
    """An on-disk container violates the expected layout or shapes."""


class MissingParameterError(ParameterError):
    """Pipeline validation found an operation with an unbound parameter."""

    def __init__(self, operation: str, names):
        self.operation = operation
        self.names = tuple(names)
        super().__init__(
            f"operation '{operation}' is missing required parameter(s): "
            + ", ".join(self.names)
        )


class PipelineError(SonolabError):
    """The pipeline is structurally broken (e.g. operation keys do not chain)."""


class DegenerateInputError(SonolabError):
    """An input tensor is degenerate for the requested operation (e.g. all-zero)."""
