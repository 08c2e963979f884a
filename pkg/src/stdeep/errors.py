"""Exception types shared across the package."""


class StdeepError(Exception):
    """Base class for all stdeep errors."""


class EmptyTrack(StdeepError):
    """A filtering step removed every box from a face track."""


class ZeroMedian(StdeepError):
    """Median box width is zero; upstream data is invalid."""


class MultipleFaces(StdeepError):
    """A detector returned more than one face for a frame."""


class UnknownMethod(StdeepError):
    """Unrecognized fake-generation method name."""


class BadSpec(StdeepError):
    """Encoder spec is inconsistent or not buildable."""


class ShapeMismatch(StdeepError):
    """Input tensor shape does not match the encoder family contract."""


class BadManifest(StdeepError):
    """Corpus manifest cannot support the requested operation."""


class Diverged(StdeepError):
    """Validation loss became non-finite during training."""


class MissingScores(StdeepError):
    """Metric computation received a manifest with unscored videos."""


class NoFrames(StdeepError):
    """A video with no frames cannot be scored."""


class TooFewRows(StdeepError):
    """Not enough feature rows for the requested embedding perplexity."""


class BadN(StdeepError):
    """flip-n-random count outside [0, clip_len]."""


class NoConvBlock(StdeepError):
    """Model does not expose a convolutional block for activation mapping."""
