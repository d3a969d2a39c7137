"""Exception types raised across the package."""


class DocSRError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(DocSRError, ValueError):
    pass


class NonPositiveOutput(DocSRError, ValueError):
    pass


class IndivisibleStride(DocSRError, ValueError):
    pass


class NonFiniteLoss(DocSRError, ArithmeticError):
    """A loss evaluation produced NaN or Inf.

    ``last_good`` optionally carries the most recent model state that was
    still finite (set by the trainer).
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class PageTooSmall(DocSRError, ValueError):
    pass


class ImageTooSmall(DocSRError, ValueError):
    pass


class EmptyCorpus(DocSRError, ValueError):
    pass


class EmptyDataset(DocSRError, ValueError):
    pass


class UnsupportedFormat(DocSRError, ValueError):
    pass


class FormatError(DocSRError, ValueError):
    pass


class ChecksumError(FormatError):
    pass
