"""Exception taxonomy shared across the package.

Everything raised on purpose derives from SpeechRespError so callers (and
the CLI) can separate our failures from genuine bugs. DivergenceError is
kept distinct because the CLI maps it to its own exit code.
"""


class SpeechRespError(Exception):
    """Base class for all errors this package raises deliberately."""


class FormatError(SpeechRespError):
    """A file does not conform to its declared on-disk format."""


class UnsupportedFormatError(FormatError):
    """A file is well formed but uses an encoding we refuse to convert silently."""


class TruncationError(FormatError):
    """A payload is shorter (or longer) than its header declares."""


class DegenerateSignalError(SpeechRespError):
    """A signal has zero variance where variance is required."""


class CoverageError(SpeechRespError):
    """Belt readings leave too large a gap at the edges of the audio timeline."""


class AlignmentError(SpeechRespError):
    """Feature streams disagree on frame rate or frame count."""


class ParameterError(SpeechRespError):
    """An argument lies outside its documented range."""


class DivergenceError(SpeechRespError):
    """Training produced a non-finite loss or gradient."""


class UndefinedMetricError(SpeechRespError):
    """A metric has an empty denominator."""
