import numpy as np
import pytest

from nodcast.errors import AudioFormatError, InvalidConfigError, ShapeError
from nodcast.frontend import (
    AUDIO_RATE_HZ,
    FrameEmbedding,
    WaveformChunk,
    encode_samples,
    encode_window,
    frame_count,
)
from nodcast.model import ModelConfig


def chunk_of(samples):
    return WaveformChunk(AUDIO_RATE_HZ, samples)


CFG50 = ModelConfig(frame_rate=50, window_seconds=2.0, dim=32, heads=4, seed=1)


def test_frame_count_values():
    assert frame_count(20.0, 50) == 1000
    assert frame_count(10.0, 10) == 100
    assert frame_count(1.0, 50) == 50


def test_frame_count_rejects_nonpositive():
    with pytest.raises(InvalidConfigError):
        frame_count(0.0, 50)


def test_zero_window_long():
    cfg = ModelConfig(frame_rate=50, window_seconds=20.0, dim=32, heads=4, seed=1)
    emb = encode_window(chunk_of(np.zeros(20 * AUDIO_RATE_HZ)), cfg)
    assert emb.data.shape == (1000, 32)
    assert np.all(np.isfinite(emb.data))


def test_deterministic():
    rng = np.random.default_rng(0)
    samples = np.clip(rng.normal(0, 0.2, 2 * AUDIO_RATE_HZ), -1, 1)
    a = encode_window(chunk_of(samples), CFG50)
    b = encode_window(chunk_of(samples.copy()), CFG50)
    np.testing.assert_array_equal(a.data, b.data)


def test_causality_last_20ms_only_touches_last_frame():
    rng = np.random.default_rng(1)
    n = 2 * AUDIO_RATE_HZ
    tail = AUDIO_RATE_HZ // 50  # 20 ms
    for trial in range(50):
        base = np.clip(rng.normal(0, 0.2, n), -1, 1)
        other = base.copy()
        other[-tail:] = np.clip(rng.normal(0, 0.2, tail), -1, 1)
        ea = encode_window(chunk_of(base), CFG50).data
        eb = encode_window(chunk_of(other), CFG50).data
        np.testing.assert_array_equal(ea[:-1], eb[:-1])
        assert not np.array_equal(ea[-1], eb[-1])


def test_energy_sensitivity():
    rng = np.random.default_rng(2)
    tt = np.arange(2 * AUDIO_RATE_HZ) / AUDIO_RATE_HZ
    speech = np.clip(0.3 * np.sin(2 * np.pi * 4 * tt) * rng.standard_normal(len(tt)), -1, 1)
    silent = encode_window(chunk_of(np.zeros(len(tt))), CFG50).data
    voiced = encode_window(chunk_of(speech), CFG50).data
    assert np.any(np.abs(silent - voiced) > 1e-6)


def test_wrong_sample_count_rejected():
    with pytest.raises(ShapeError):
        encode_window(chunk_of(np.zeros(123 * 320)), CFG50)


def test_ten_hz_pools_five_frames():
    cfg10 = ModelConfig(frame_rate=10, window_seconds=2.0, dim=32, heads=4, seed=1)
    rng = np.random.default_rng(3)
    samples = np.clip(rng.normal(0, 0.2, 2 * AUDIO_RATE_HZ), -1, 1)
    e50 = encode_samples(samples, CFG50)
    e10 = encode_window(chunk_of(samples), cfg10).data
    assert e10.shape == (20, 32)
    np.testing.assert_allclose(e10, e50.reshape(20, 5, 32).mean(axis=1))


def test_waveform_chunk_validation():
    with pytest.raises(AudioFormatError):
        WaveformChunk(8000, np.zeros(100))
    with pytest.raises(AudioFormatError):
        WaveformChunk(AUDIO_RATE_HZ, np.full(100, 2.0))
    with pytest.raises(AudioFormatError):
        WaveformChunk(AUDIO_RATE_HZ, np.zeros(100), channel_id="other")


def test_frame_embedding_shape_guard():
    with pytest.raises(ShapeError):
        FrameEmbedding(50.0, 8, np.zeros((10, 4)))
