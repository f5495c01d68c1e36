"""Exception types shared across the library.

Exit-code mapping used by the CLI: configuration problems exit 2, data
(file/format) problems exit 3, numerical failures exit 4, validation
failures exit 5.
"""


class CaolError(Exception):
    """Base class for all library errors."""


class ConfigError(CaolError):
    """Invalid configuration or CLI arguments."""


# --- dimension / dataset errors -------------------------------------------

class DimensionMismatch(CaolError):
    """Operands have incompatible shapes."""


class EmptyDataset(CaolError):
    """An operation received zero samples."""


class InvalidOffset(CaolError):
    """A shift offset does not fit the signal geometry."""


# --- numerical errors ------------------------------------------------------

class RankDeficient(CaolError):
    """A matrix failed the full-rank test; polar factors are not unique."""


class DeltaOutOfRange(CaolError):
    """The concentration parameter is outside its admissible open interval."""


class RankHypothesisUnsatisfiable(CaolError):
    """Instance generation kept failing the rank hypotheses after retries."""


class MissingSnapshots(CaolError):
    """A training trace lacks the snapshots needed for post-hoc analysis."""


class VacuousProbability(UserWarning):
    """The tail probability evaluated <= 0; coverage checks are skipped."""


# --- data / file-format errors ---------------------------------------------

class DataError(CaolError):
    """Base class for dataset loading and file-format errors."""


class MalformedHeader(DataError):
    """A file header could not be parsed."""


class BadMagic(DataError):
    """A file does not start with the expected magic bytes."""


class TruncatedData(DataError):
    """A file payload is shorter than its header declares."""


class DimensionOverflow(DataError):
    """Declared tensor dimensions are zero or implausibly large."""


class UnknownStep(DataError):
    """An unrecognized preprocessing step name."""


class PatchTooLarge(DataError):
    """Requested patch dimensions exceed the image dimensions."""


class ChecksumMismatch(DataError):
    """A manifest entry's checksum does not match the file on disk."""


class ValidationFailure(CaolError):
    """An asserted theorem inequality failed on a generated instance."""
