"""Exception hierarchy shared by the library, the operations and the adapters."""

from __future__ import annotations


class SbaeError(Exception):
    """Base error. ``exit_code`` is what the command line returns for it."""

    exit_code = 1


class ConfigError(SbaeError):
    """Invalid configuration or flag combination."""


class CorpusError(SbaeError):
    """Corpus pipeline precondition violated."""


class TokenizerError(SbaeError):
    """Malformed vocabulary or out-of-range token id."""


class ShapeError(SbaeError, ValueError):
    """Tensor shapes do not fit the requested operation."""


class NumericError(SbaeError):
    """Non-finite values or an empty loss."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""

    exit_code = 3


class CheckpointError(SbaeError):
    """Checkpoint missing, corrupt or incompatible with the model."""

    exit_code = 2


class ArtifactError(SbaeError):
    """An input could not be read or an output could not be written."""

    exit_code = 2
