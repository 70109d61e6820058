"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: input/format problems exit 2,
external-client problems exit 3.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(PipelineError):
    """A file or payload does not match its declared format."""


class DataError(PipelineError):
    """Well-formed input carrying invalid values (NaN, bad ranges, duplicate ids)."""


class ConfigError(PipelineError):
    """Invalid or inconsistent configuration."""


class ClientError(PipelineError):
    """An external model client (VLM, embedder, adapter) failed."""
