"""Real-time loop: sliding audio window, per-frame ticks, event emission.

A session holds one stereo stream. Audio arrives through ``push_audio`` in
arbitrary chunk sizes; ``tick`` runs the encoder and model over the
current window once per frame period and returns the newest frame's
predictions. Until the window fills, the buffer is left-padded with zeros
and attention only sees the frames backed by real audio, which makes
ticked output match a batch forward over the file exactly.

Frame probabilities become discrete events through a hysteresis rule:
a class must be the argmax above a threshold for a run of consecutive
ticks, and per-type refractory periods block rapid-fire repeats. Emitted
backchannel events can optionally be fed back by mixing a short token
waveform into the listener channel ("the system just backchanneled"),
which a trained model reads as listener speech.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from nodcast.annotation import NodType
from nodcast.errors import AudioFormatError, EmptyInputError, InvalidConfigError
from nodcast.frontend import AUDIO_RATE_HZ, encode_samples
from nodcast.model import ModelOutputs, NodPredictor, PredictionFrame, predict_latest_frame

EVENT_KINDS = ("nod", "short", "long", "long_p", "backchannel")


@dataclass(frozen=True)
class StreamConfig:
    """Streaming and event-emission settings.

    ``nod`` is the event kind used by two-class timing models, which do
    not distinguish nod types.
    """

    frame_rate: int = 10
    window_seconds: float = 10.0
    emit_threshold: float = 0.5
    min_consecutive: int = 3
    refractory: dict = field(default_factory=lambda: {
        "nod": 1.0, "short": 0.8, "long": 1.2, "long_p": 1.5, "backchannel": 1.0})
    self_feedback: bool = False

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise InvalidConfigError("window_seconds must be positive")
        if not 0 < self.emit_threshold < 1:
            raise InvalidConfigError("emit_threshold must lie in (0, 1)")
        if self.min_consecutive < 1:
            raise InvalidConfigError("min_consecutive must be >= 1")
        missing = [k for k in EVENT_KINDS if k not in self.refractory]
        if missing:
            raise InvalidConfigError(f"refractory missing entries for {missing}")


@dataclass(frozen=True)
class NodEvent:
    """A discrete listener-response decision on the stream clock."""

    emit_time: float
    kind: str                      # one of EVENT_KINDS
    probability: float

    @property
    def nod_type(self) -> NodType | None:
        return NodType(self.kind) if self.kind in ("short", "long", "long_p") else None


@dataclass(frozen=True)
class RtfReport:
    """Model-compute cost relative to audio time, plus tick latencies."""

    audio_seconds: float
    wall_seconds: float
    rtf: float
    latency_p50: float
    latency_p95: float
    latency_max: float
    ticks: int

    def as_dict(self):
        return {
            "audio_seconds": self.audio_seconds,
            "wall_seconds": self.wall_seconds,
            "rtf": self.rtf,
            "latency_p50": self.latency_p50,
            "latency_p95": self.latency_p95,
            "latency_max": self.latency_max,
            "ticks": self.ticks,
        }


def _feedback_token(duration: float = 0.3, level: float = 0.35) -> np.ndarray:
    """Bundled backchannel proxy waveform (two-syllable modulated noise)."""
    rng = np.random.default_rng(0xBCBC)
    n = int(duration * AUDIO_RATE_HZ)
    tt = np.arange(n) / n
    env = np.sin(np.pi * np.clip(tt * 2, 0, 1)) ** 2 \
        + np.sin(np.pi * np.clip(tt * 2 - 1, 0, 1)) ** 2
    return level * env * rng.standard_normal(n) * 0.5


class StreamSession:
    """One logical stream; push_audio and tick may run on separate threads."""

    def __init__(self, model: NodPredictor, cfg: StreamConfig | None = None):
        self.model = model
        self.cfg = cfg or StreamConfig(frame_rate=model.cfg.frame_rate,
                                       window_seconds=model.cfg.window_seconds)
        if self.cfg.frame_rate != model.cfg.frame_rate:
            raise InvalidConfigError("stream and model frame rates differ")
        self._capacity = int(round(self.cfg.window_seconds * AUDIO_RATE_HZ))
        self._buffer = np.zeros((self._capacity, 2))
        self._valid = 0
        self._pushed = 0
        self._lock = threading.Lock()
        self._hop = AUDIO_RATE_HZ // self.cfg.frame_rate
        # Event hysteresis state.
        self._runs = {kind: 0 for kind in EVENT_KINDS}
        self._last_nod_time = -np.inf
        self._last_bc_time = -np.inf
        # Feedback waveform not yet consumed by pushes.
        self._pending_feedback = np.zeros(0)
        self._token = _feedback_token()

    @property
    def stream_time(self) -> float:
        """Seconds of audio received so far."""
        return self._pushed / AUDIO_RATE_HZ

    def push_audio(self, samples: np.ndarray) -> None:
        """Append stereo samples; keeps exactly the newest window."""
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != 2:
            raise AudioFormatError("expected (samples, 2) stereo chunk")
        with self._lock:
            if self._pending_feedback.size:
                n = min(len(samples), self._pending_feedback.size)
                samples = samples.copy()
                samples[:n, 1] = np.clip(samples[:n, 1] + self._pending_feedback[:n],
                                         -1.0, 1.0)
                self._pending_feedback = self._pending_feedback[n:]
            self._buffer = np.concatenate([self._buffer, samples])[-self._capacity:]
            self._valid = min(self._capacity, self._valid + len(samples))
            self._pushed += len(samples)

    def buffer_snapshot(self) -> np.ndarray:
        with self._lock:
            return self._buffer.copy()

    def tick(self) -> PredictionFrame:
        """Encode + forward over the current window; newest frame out."""
        outputs, _ = self._tick_outputs()
        return predict_latest_frame(outputs)

    def _tick_outputs(self):
        with self._lock:
            window = self._buffer.copy()
            valid = self._valid
        t0 = time.perf_counter()
        user = encode_samples(window[:, 0], self.model.cfg)
        system = encode_samples(window[:, 1], self.model.cfg)
        valid_frames = max(1, min(len(user), valid // self._hop))
        outputs = self.model.forward(user[-valid_frames:], system[-valid_frames:])
        return outputs, time.perf_counter() - t0

    def emit_events(self, frame: PredictionFrame) -> list[NodEvent]:
        """Apply threshold + consecutive-run + refractory rules to one tick."""
        cfg = self.cfg
        now = self.stream_time
        events = []

        nod_class = int(np.argmax(frame.p_nod))
        p_top = float(frame.p_nod[nod_class])
        if self.model.cfg.nod_classes == 2:
            nod_kinds = {1: "nod"}
        else:
            nod_kinds = {1: "short", 2: "long", 3: "long_p"}
        for klass, kind in nod_kinds.items():
            if nod_class == klass and p_top >= cfg.emit_threshold:
                self._runs[kind] += 1
            else:
                self._runs[kind] = 0
            if (self._runs[kind] >= cfg.min_consecutive
                    and now - self._last_nod_time >= cfg.refractory[kind]):
                events.append(NodEvent(now, kind, p_top))
                self._last_nod_time = now
                self._runs[kind] = 0

        if frame.p_bc is not None:
            if frame.p_bc >= cfg.emit_threshold:
                self._runs["backchannel"] += 1
            else:
                self._runs["backchannel"] = 0
            if (self._runs["backchannel"] >= cfg.min_consecutive
                    and now - self._last_bc_time >= cfg.refractory["backchannel"]):
                event = NodEvent(now, "backchannel", float(frame.p_bc))
                events.append(event)
                self._last_bc_time = now
                self._runs["backchannel"] = 0
                if cfg.self_feedback:
                    self.apply_self_feedback(event)
        return events

    def apply_self_feedback(self, event: NodEvent) -> None:
        """Mix the bundled token into the listener channel from now on."""
        if event.kind != "backchannel":
            return
        with self._lock:
            pending = self._pending_feedback
            if pending.size < self._token.size:
                pending = np.concatenate(
                    [pending, np.zeros(self._token.size - pending.size)])
            pending[:self._token.size] += self._token
            self._pending_feedback = pending


def stream_file(model: NodPredictor, audio: np.ndarray,
                cfg: StreamConfig | None = None, collect_outputs: bool = False):
    """Tick through a whole stereo array one frame period at a time.

    Returns (events, per-tick latencies, outputs-by-frame or None).
    """
    session = StreamSession(model, cfg)
    hop = AUDIO_RATE_HZ // session.cfg.frame_rate
    n_ticks = len(audio) // hop
    if n_ticks == 0:
        raise EmptyInputError("audio shorter than one frame period")
    events = []
    latencies = []
    collected = [] if collect_outputs else None
    for i in range(n_ticks):
        session.push_audio(audio[i * hop:(i + 1) * hop])
        outputs, elapsed = session._tick_outputs()
        latencies.append(elapsed)
        frame = predict_latest_frame(outputs)
        events.extend(session.emit_events(frame))
        if collect_outputs:
            collected.append(frame)
    return events, np.array(latencies), collected


def batch_forward(model: NodPredictor, audio: np.ndarray) -> ModelOutputs:
    """Offline reference: embed the whole file once and run one forward."""
    hop = AUDIO_RATE_HZ // model.cfg.frame_rate
    n = (len(audio) // hop) * hop
    user = encode_samples(audio[:n, 0], model.cfg)
    system = encode_samples(audio[:n, 1], model.cfg)
    return model.forward(user, system)


def measure_rtf(model: NodPredictor, audio: np.ndarray,
                cfg: StreamConfig | None = None) -> RtfReport:
    """Back-to-back ticks over a file; only model compute is timed."""
    _, latencies, _ = stream_file(model, audio, cfg)
    hop = AUDIO_RATE_HZ // (cfg.frame_rate if cfg else model.cfg.frame_rate)
    audio_seconds = (len(audio) // hop) * hop / AUDIO_RATE_HZ
    wall = float(latencies.sum())
    return RtfReport(
        audio_seconds=audio_seconds,
        wall_seconds=wall,
        rtf=wall / audio_seconds,
        latency_p50=float(np.percentile(latencies, 50)),
        latency_p95=float(np.percentile(latencies, 95)),
        latency_max=float(latencies.max()),
        ticks=len(latencies),
    )
