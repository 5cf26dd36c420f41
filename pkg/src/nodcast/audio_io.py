"""16-bit PCM stereo WAV reading and writing (16 kHz, 2 channels)."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from nodcast.errors import AudioFormatError

AUDIO_RATE_HZ = 16000


def write_wav_stereo(path, audio: np.ndarray, rate: int = AUDIO_RATE_HZ) -> None:
    """Write float audio in [-1, 1], shape (samples, 2), as 16-bit PCM."""
    audio = np.asarray(audio)
    if audio.ndim != 2 or audio.shape[1] != 2:
        raise AudioFormatError("expected (samples, 2) stereo audio")
    pcm = np.clip(audio * 32767.0, -32768, 32767).astype(np.int16)
    wavfile.write(path, rate, pcm)


def read_wav_stereo(path) -> np.ndarray:
    """Read a 16 kHz 16-bit stereo WAV into float64 (samples, 2)."""
    rate, data = wavfile.read(path)
    if rate != AUDIO_RATE_HZ:
        raise AudioFormatError(f"expected {AUDIO_RATE_HZ} Hz, got {rate}")
    if data.ndim != 2 or data.shape[1] != 2:
        raise AudioFormatError("expected 2-channel audio")
    if data.dtype != np.int16:
        raise AudioFormatError(f"expected 16-bit PCM, got {data.dtype}")
    return data.astype(np.float64) / 32768.0
