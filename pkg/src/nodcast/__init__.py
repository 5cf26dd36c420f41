"""Streaming prediction of listener nodding and backchannel from stereo audio."""

__version__ = "0.1.0"

CHECKPOINT_VERSION = 1
