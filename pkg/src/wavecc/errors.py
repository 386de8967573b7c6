"""Exception hierarchy shared by all wavecc modules.

Every error carries an exit code so the command line front end can map
failures onto its documented status values without inspecting messages.
"""


class WaveccError(Exception):
    exit_code = 1

    def __init__(self, message, **context):
        self.context = context
        if context:
            detail = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class ShapeError(WaveccError, ValueError):
    exit_code = 5


class NumericError(WaveccError, ArithmeticError):
    exit_code = 5


class FormatError(WaveccError, ValueError):
    """Malformed container, header, image file or bitstream."""

    exit_code = 4


class DigestError(FormatError):
    exit_code = 4


class CoderError(FormatError):
    """Range coder failure: corrupted stream or symbol outside the alphabet."""

    exit_code = 4


class DataError(WaveccError, IOError):
    exit_code = 3
