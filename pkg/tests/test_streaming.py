import numpy as np
import pytest

from nodcast.errors import AudioFormatError, EmptyInputError, InvalidConfigError
from nodcast.frontend import AUDIO_RATE_HZ
from nodcast.model import ModelConfig, NodPredictor, PredictionFrame
from nodcast.streaming import (
    RtfReport,
    StreamConfig,
    StreamSession,
    batch_forward,
    measure_rtf,
    stream_file,
)

TINY = ModelConfig(frame_rate=10, window_seconds=6.0, dim=16, self_layers=1,
                   cross_layers=1, heads=2, nod_classes=4, multitask_bc=True, seed=2)


def tiny_model():
    return NodPredictor(TINY)


def make_frame(p_top=0.9, top_class=2, p_bc=0.0, classes=4):
    p_nod = np.full(classes, (1 - p_top) / (classes - 1))
    p_nod[top_class] = p_top
    return PredictionFrame(p_nod, p_bc, np.array([0.5, 0.5]), np.full(256, 1 / 256))


def silence(seconds):
    return np.zeros((int(seconds * AUDIO_RATE_HZ), 2))


# --- buffer behaviour ---------------------------------------------------

def test_push_pads_left_with_zeros():
    session = StreamSession(tiny_model(), StreamConfig(frame_rate=10, window_seconds=6.0))
    audio = np.full((AUDIO_RATE_HZ, 2), 0.25)
    session.push_audio(audio)
    buf = session.buffer_snapshot()
    assert buf.shape == (6 * AUDIO_RATE_HZ, 2)
    assert np.all(buf[:5 * AUDIO_RATE_HZ] == 0.0)
    np.testing.assert_array_equal(buf[5 * AUDIO_RATE_HZ:], audio)


def test_push_beyond_capacity_drops_oldest():
    session = StreamSession(tiny_model(), StreamConfig(frame_rate=10, window_seconds=6.0))
    rng = np.random.default_rng(0)
    full = np.clip(rng.normal(0, 0.2, (8 * AUDIO_RATE_HZ, 2)), -1, 1)
    session.push_audio(full)
    buf = session.buffer_snapshot()
    assert buf.shape[0] == 6 * AUDIO_RATE_HZ
    np.testing.assert_array_equal(buf, full[-6 * AUDIO_RATE_HZ:])


def test_chunking_is_irrelevant():
    rng = np.random.default_rng(1)
    audio = np.clip(rng.normal(0, 0.2, (AUDIO_RATE_HZ, 2)), -1, 1)
    one = StreamSession(tiny_model(), StreamConfig(frame_rate=10, window_seconds=6.0))
    two = StreamSession(tiny_model(), StreamConfig(frame_rate=10, window_seconds=6.0))
    one.push_audio(audio)
    half = len(audio) // 2
    two.push_audio(audio[:half])
    two.push_audio(audio[half:])
    np.testing.assert_array_equal(one.buffer_snapshot(), two.buffer_snapshot())


def test_push_rejects_mono():
    session = StreamSession(tiny_model())
    with pytest.raises(AudioFormatError):
        session.push_audio(np.zeros(100))


def test_stream_config_validation():
    with pytest.raises(InvalidConfigError):
        StreamConfig(emit_threshold=1.5)
    with pytest.raises(InvalidConfigError):
        StreamConfig(refractory={"short": 1.0})


# --- ticking ------------------------------------------------------------

def test_tick_deterministic():
    rng = np.random.default_rng(2)
    audio = np.clip(rng.normal(0, 0.2, (AUDIO_RATE_HZ, 2)), -1, 1)
    frames = []
    for _ in range(2):
        session = StreamSession(tiny_model())
        session.push_audio(audio)
        frames.append(session.tick())
    np.testing.assert_array_equal(frames[0].p_nod, frames[1].p_nod)
    np.testing.assert_array_equal(frames[0].p_vap, frames[1].p_vap)


def test_cold_start_tick_works():
    session = StreamSession(tiny_model())
    frame = session.tick()
    assert np.isfinite(frame.p_nod).all()
    assert frame.p_nod.sum() == pytest.approx(1.0, abs=1e-9)


def test_streaming_matches_batch_forward():
    rng = np.random.default_rng(3)
    model = tiny_model()
    audio = np.clip(rng.normal(0, 0.15, (6 * AUDIO_RATE_HZ, 2)), -1, 1)
    _, _, ticked = stream_file(model, audio, collect_outputs=True)
    batch = batch_forward(model, audio)
    assert len(ticked) == len(batch)
    for i, frame in enumerate(ticked):
        np.testing.assert_allclose(frame.p_nod, batch.p_nod[i], atol=1e-6)
        np.testing.assert_allclose(frame.p_vad, batch.p_vad[i], atol=1e-6)
        np.testing.assert_allclose(frame.p_vap, batch.p_vap[i], atol=1e-6)


# --- event emission ---------------------------------------------------

def advance(session, seconds):
    session.push_audio(silence(seconds))


def test_no_events_below_threshold():
    session = StreamSession(tiny_model())
    for _ in range(50):
        advance(session, 0.1)
        assert session.emit_events(make_frame(p_top=0.4)) == []


def test_event_fires_on_third_consecutive_tick():
    session = StreamSession(tiny_model())
    fired = []
    for _ in range(3):
        advance(session, 0.1)
        fired.extend(session.emit_events(make_frame(p_top=0.9, top_class=2)))
    assert len(fired) == 1
    assert fired[0].kind == "long"
    assert fired[0].probability == pytest.approx(0.9)
    assert fired[0].emit_time == pytest.approx(0.3)


def test_interrupted_run_does_not_fire():
    session = StreamSession(tiny_model())
    fired = []
    seq = [0.9, 0.9, 0.4, 0.9, 0.9]
    for p in seq:
        advance(session, 0.1)
        fired.extend(session.emit_events(make_frame(p_top=p, top_class=2)))
    assert fired == []


def test_refractory_blocks_second_surge():
    cfg = StreamConfig(frame_rate=10, window_seconds=6.0,
                       refractory={"nod": 1.0, "short": 1.0, "long": 1.0,
                                   "long_p": 1.0, "backchannel": 1.0})
    session = StreamSession(tiny_model(), cfg)
    fired = []
    # First surge fires; second surge 0.5 s later is inside the refractory.
    for _ in range(3):
        advance(session, 0.1)
        fired.extend(session.emit_events(make_frame(0.9, 2)))
    for _ in range(2):
        advance(session, 0.1)
        fired.extend(session.emit_events(make_frame(0.3, 0)))
    for _ in range(3):
        advance(session, 0.1)
        fired.extend(session.emit_events(make_frame(0.9, 2)))
    assert len(fired) == 1


def test_sustained_surge_spaced_by_refractory():
    session = StreamSession(tiny_model())
    fired = []
    for _ in range(40):  # 4 s of sustained high probability
        advance(session, 0.1)
        fired.extend(session.emit_events(make_frame(0.95, 2)))
    assert len(fired) >= 2
    gaps = np.diff([e.emit_time for e in fired])
    assert np.all(gaps >= session.cfg.refractory["long"] - 1e-9)


def test_backchannel_events_independent_of_nods():
    session = StreamSession(tiny_model())
    fired = []
    for _ in range(3):
        advance(session, 0.1)
        fired.extend(session.emit_events(make_frame(0.9, 2, p_bc=0.9)))
    kinds = sorted(e.kind for e in fired)
    assert kinds == ["backchannel", "long"]


# --- self-feedback -----------------------------------------------------

def test_feedback_disabled_leaves_buffer():
    session = StreamSession(tiny_model(), StreamConfig(frame_rate=10, window_seconds=6.0,
                                                       self_feedback=False))
    for _ in range(3):
        advance(session, 0.1)
        session.emit_events(make_frame(0.2, 0, p_bc=0.95))
    before = session.buffer_snapshot()
    advance(session, 0.5)
    after = session.buffer_snapshot()
    assert np.all(after[-int(0.5 * AUDIO_RATE_HZ):, 1] == 0.0)
    assert before.shape == after.shape


def test_feedback_mixes_token_into_listener_channel():
    session = StreamSession(tiny_model(), StreamConfig(frame_rate=10, window_seconds=6.0,
                                                       self_feedback=True))
    fired = []
    for _ in range(3):
        advance(session, 0.1)
        fired.extend(session.emit_events(make_frame(0.2, 0, p_bc=0.95)))
    assert [e.kind for e in fired] == ["backchannel"]
    advance(session, 0.5)
    buf = session.buffer_snapshot()
    injected = buf[-int(0.5 * AUDIO_RATE_HZ):, 1]
    assert np.abs(injected[:int(0.3 * AUDIO_RATE_HZ)]).max() > 0.0
    assert np.all(np.abs(buf) <= 1.0)


def test_two_overlapping_injections_mix_additively():
    session = StreamSession(tiny_model(), StreamConfig(frame_rate=10, window_seconds=6.0,
                                                       self_feedback=True))
    from nodcast.streaming import NodEvent, _feedback_token
    session.apply_self_feedback(NodEvent(0.0, "backchannel", 1.0))
    session.apply_self_feedback(NodEvent(0.0, "backchannel", 1.0))
    advance(session, 0.4)
    token = _feedback_token()
    buf = session.buffer_snapshot()
    got = buf[-int(0.4 * AUDIO_RATE_HZ):, 1]
    expected = np.clip(2 * token[:len(got)], -1, 1)
    np.testing.assert_allclose(got[:len(token)], expected[:len(token)], atol=1e-12)


# --- RTF ---------------------------------------------------------------

def test_measure_rtf_bookkeeping():
    model = tiny_model()
    report = measure_rtf(model, silence(3.0))
    assert isinstance(report, RtfReport)
    assert report.rtf > 0
    assert report.audio_seconds == pytest.approx(3.0)
    assert report.ticks == 30
    assert report.latency_max >= report.latency_p95 >= report.latency_p50 > 0
    payload = report.as_dict()
    assert set(payload) == {"audio_seconds", "wall_seconds", "rtf", "latency_p50",
                            "latency_p95", "latency_max", "ticks"}


def test_rtf_rejects_too_short_file():
    with pytest.raises(EmptyInputError):
        measure_rtf(tiny_model(), silence(0.05))
