"""Exception types shared across the package.

``ValidationError`` subclasses signal bad input (the CLI maps them to exit
code 2); everything else derived from ``XRTrafficError`` is a runtime failure.
"""


class XRTrafficError(Exception):
    code = "error"


class ValidationError(XRTrafficError, ValueError):
    code = "invalid"


class UnsupportedFrameRate(ValidationError):
    code = "unsupported-frame-rate"


class UnknownProfile(ValidationError):
    code = "unknown-profile"


class TooFewFrames(ValidationError):
    code = "too-few-frames"


class EmptySample(ValidationError):
    code = "empty-sample"


class EmptyInput(ValidationError):
    code = "empty-input"


class DegenerateInput(ValidationError):
    code = "degenerate-input"


class DegenerateSample(ValidationError):
    code = "degenerate-sample"


class InsufficientData(ValidationError):
    code = "insufficient-data"

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)


class NoConvergence(XRTrafficError):
    code = "no-convergence"

    def __init__(self, message, bracket=None, iterations=0):
        super().__init__(message)
        self.bracket = bracket
        self.iterations = iterations


class TraceFormatError(ValidationError):
    code = "trace-format"


class FrameTooLarge(ValidationError):
    code = "frame-too-large"


class HeaderError(ValidationError):
    code = "bad-header"


class ReassemblyError(XRTrafficError):
    code = "reassembly"


class MissingFragments(ReassemblyError):
    code = "missing-fragments"

    def __init__(self, message, gaps=()):
        super().__init__(message)
        self.gaps = tuple(gaps)


class ChecksumMismatch(ReassemblyError):
    code = "checksum-mismatch"


class InconsistentBurst(ReassemblyError):
    code = "inconsistent-burst"


class ConfigError(ValidationError):
    code = "bad-config"
