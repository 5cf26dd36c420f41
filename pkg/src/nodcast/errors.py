"""Exception types raised across the package."""


class NodcastError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(NodcastError):
    """A configuration value violates its constraints."""


class UnsupportedRateError(NodcastError):
    """An input sample rate cannot be handled."""


class ShapeError(NodcastError):
    """An array argument has the wrong shape or length."""


class BoundsError(NodcastError):
    """A time interval or index lies outside the available data."""


class HorizonError(NodcastError):
    """Not enough future frames to build a projection target."""


class AudioFormatError(NodcastError):
    """Audio input has the wrong channel count, width, or rate."""


class EmptyInputError(NodcastError):
    """An operation received an empty sequence."""


class InsufficientDataError(NodcastError):
    """Too few groups/observations for the requested statistic."""


class TrainingDivergedError(NodcastError):
    """Training hit a non-finite loss; message carries diagnostics."""
