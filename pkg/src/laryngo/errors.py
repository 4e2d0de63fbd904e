"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line frontend can map
failures without a lookup table: 2 for input/config problems, 3 for data
that is well-formed but too degenerate to analyse.
"""


class LaryngoError(Exception):
    exit_code = 2

    @property
    def name(self):
        return type(self).__name__


class InputError(LaryngoError):
    exit_code = 2


class DegeneracyError(LaryngoError):
    exit_code = 3


# ingestion / configuration
class UnreadableFile(InputError):
    pass


class UnsupportedFormat(InputError):
    pass


class MissingMetadata(InputError):
    pass


class MissingFrameEntry(InputError):
    pass


class BadParams(InputError, ValueError):
    pass


class AlphaOutOfRange(InputError, ValueError):
    pass


class WriteFailure(InputError):
    pass


# audio
class ClipTooShort(InputError):
    pass


class TooFewFrames(InputError):
    pass


class ScorerFailure(LaryngoError):
    def __init__(self, chunk_index, cause):
        super().__init__(f"scorer failed on chunk {chunk_index}: {cause!r}")
        self.chunk_index = chunk_index
        self.cause = cause


# video
class SequenceTooShort(InputError, ValueError):
    pass


class NoEligibleSegment(DegeneracyError):
    pass


# geometry
class MaskTooSmall(DegeneracyError):
    pass


class DegenerateMidline(DegeneracyError):
    pass


class LevelOutsideMask(DegeneracyError):
    pass


class FitDegenerate(DegeneracyError):
    pass


class CoincidentPoints(DegeneracyError):
    pass


class AllFramesDegenerate(DegeneracyError):
    pass


# classification / export
class InsufficientFrames(DegeneracyError):
    pass


class AlignmentMismatch(DegeneracyError):
    pass
