"""Waveform-to-embedding frontend.

A stack of strided causal convolutions with frozen, seed-derived weights
maps 16 kHz audio to frame-synchronous embeddings at 50 Hz (stride product
320); 10 Hz operation average-pools groups of five 50 Hz frames. The first
layer uses an absolute-value nonlinearity so embeddings track signal
energy; later layers use tanh.

Strict causality: embedding frame t is computed from samples in
``[(t+1)*hop - receptive_field, (t+1)*hop)``, i.e. only from audio at
times <= (t+1)/frame_rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from nodcast.errors import AudioFormatError, InvalidConfigError, ShapeError

AUDIO_RATE_HZ = 16000
BASE_FRAME_RATE_HZ = 50
HOP_SAMPLES = AUDIO_RATE_HZ // BASE_FRAME_RATE_HZ  # 320

# (kernel, stride, output channels); None = model embedding width.
_LAYER_SPECS = ((32, 16, 16), (8, 5, 32), (8, 4, None))


@dataclass(frozen=True)
class WaveformChunk:
    """A fixed-length mono window of one dialogue channel."""

    sample_rate: int
    samples: np.ndarray
    channel_id: str = "user"

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate != AUDIO_RATE_HZ:
            raise AudioFormatError(f"expected {AUDIO_RATE_HZ} Hz, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise ShapeError("samples must be 1-D")
        if not np.all(np.isfinite(self.samples)) or np.any(np.abs(self.samples) > 1.0):
            raise AudioFormatError("samples must be finite and within [-1, 1]")
        if self.channel_id not in ("user", "system"):
            raise AudioFormatError(f"unknown channel_id {self.channel_id!r}")


@dataclass(frozen=True)
class FrameEmbedding:
    """Per-frame embeddings (frames x dim) at the model frame rate."""

    frame_rate: float
    dim: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] != self.dim:
            raise ShapeError("embedding data must be (frames, dim)")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]


def frame_count(window_seconds: float, frame_rate: float) -> int:
    """Number of output frames for a window: floor(seconds * rate)."""
    if window_seconds <= 0 or frame_rate <= 0:
        raise InvalidConfigError("window_seconds and frame_rate must be positive")
    return int(np.floor(window_seconds * frame_rate + 1e-9))


class CausalConvEncoder:
    """Frozen strided-conv feature extractor (16 kHz -> 50 Hz frames).

    Bias-free on purpose: zero samples map to zero features at every
    layer, so left-padding a window with zeros is exactly equivalent to
    encoding the unpadded prefix. Streaming relies on this.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xACED]))
        self.weights = []
        c_in = 1
        for kernel, stride, c_out in _LAYER_SPECS:
            c_out = c_out if c_out is not None else dim
            w = rng.normal(0.0, 1.0 / np.sqrt(kernel * c_in), (kernel, c_in, c_out))
            self.weights.append((w, stride))
            c_in = c_out

    def encode(self, samples: np.ndarray) -> np.ndarray:
        """Encode a sample vector to (n/320, dim) 50 Hz frames."""
        if len(samples) % HOP_SAMPLES != 0:
            raise ShapeError(f"sample count must be a multiple of {HOP_SAMPLES}")
        x = samples.reshape(-1, 1)
        for i, (w, stride) in enumerate(self.weights):
            k = w.shape[0]
            pad = np.zeros((k - stride, x.shape[1]))
            xp = np.concatenate([pad, x], axis=0)
            win = sliding_window_view(xp, k, axis=0)[::stride]      # (t, c, k)
            flat = win.transpose(0, 2, 1).reshape(win.shape[0], -1)
            y = flat @ w.reshape(-1, w.shape[2])
            x = np.abs(y) if i == 0 else np.tanh(y)
        return x


@lru_cache(maxsize=8)
def _encoder(dim: int, seed: int) -> CausalConvEncoder:
    return CausalConvEncoder(dim, seed)


def encode_window(chunk: WaveformChunk, cfg) -> FrameEmbedding:
    """Embed one model window of audio.

    ``cfg`` provides window_seconds, frame_rate, dim, and seed (a
    ModelConfig works). The chunk must hold exactly the window's samples;
    cold-start callers left-pad with zeros themselves.
    """
    expected = int(round(cfg.window_seconds * AUDIO_RATE_HZ))
    if len(chunk.samples) != expected:
        raise ShapeError(
            f"window needs {expected} samples, got {len(chunk.samples)}")
    frames = encode_samples(chunk.samples, cfg)
    return FrameEmbedding(cfg.frame_rate, cfg.dim, frames)


def encode_samples(samples: np.ndarray, cfg) -> np.ndarray:
    """Embed an arbitrary frame-aligned sample vector to (frames, dim)."""
    if BASE_FRAME_RATE_HZ % cfg.frame_rate != 0:
        raise InvalidConfigError(f"frame_rate must divide {BASE_FRAME_RATE_HZ}")
    pool = BASE_FRAME_RATE_HZ // cfg.frame_rate
    frames = _encoder(cfg.dim, cfg.seed).encode(np.asarray(samples, dtype=np.float64))
    if pool > 1:
        n = (frames.shape[0] // pool) * pool
        frames = frames[:n].reshape(-1, pool, cfg.dim).mean(axis=1)
    return frames
