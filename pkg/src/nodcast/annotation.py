"""Nod annotation from head-pitch motion traces.

Turns a vertical head-angle signal (radians, positive = head up) into typed
nod segments and frame-level training labels. The processing chain is:

    downsample(100 Hz) -> smooth -> detect_nod_segments -> classify_nod_type
        -> offset_segments -> rasterize_frame_labels

A nod is a downward pitch stroke. Detection runs on the rate of change of
the smoothed signal with a hysteresis pair: a segment opens when the
downward rate exceeds ``grad_on`` and closes once ``|rate|`` has stayed
below ``grad_off`` for ``merge_gap`` seconds. Three nod types are
distinguished by movement range and by the presence of a pre-stroke upward
swing:

- short:  small movement range, regardless of swinging up
- long:   large movement range, no swing-up
- long_p: large movement range preceded by an upward swing

Ground-truth labels are shifted ``offset`` seconds earlier than the motion
so that a model trained on them predicts behaviour that far in the future.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nodcast.errors import (
    BoundsError,
    InvalidConfigError,
    ShapeError,
    UnsupportedRateError,
)

ANNOTATION_RATE_HZ = 100.0

# Window (s) inspected before a segment opening when looking for a swing-up.
SWINGUP_LOOKBACK_S = 0.35


class NodType(enum.Enum):
    SHORT = "short"
    LONG = "long"
    LONG_P = "long_p"


# Frame-label class ids. 0 is reserved for "no nod"; higher id = higher
# priority when segments overlap (long_p > long > short).
NOD_CLASS_NONE = 0
NOD_CLASS_OF_TYPE = {NodType.SHORT: 1, NodType.LONG: 2, NodType.LONG_P: 3}
NOD_TYPE_OF_CLASS = {v: k for k, v in NOD_CLASS_OF_TYPE.items()}


@dataclass(frozen=True)
class MotionTrace:
    """Uniformly sampled head-pitch signal."""

    sample_rate: float
    pitch: np.ndarray
    start_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "pitch", np.asarray(self.pitch, dtype=np.float64))
        if self.sample_rate <= 0:
            raise InvalidConfigError("sample_rate must be positive")
        if self.pitch.ndim != 1 or self.pitch.size == 0:
            raise ShapeError("pitch must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(self.pitch)):
            raise ShapeError("pitch contains non-finite values")

    @property
    def duration(self) -> float:
        """Time span covered by the samples (first to last sample)."""
        return (len(self.pitch) - 1) / self.sample_rate

    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.pitch)) / self.sample_rate


@dataclass(frozen=True)
class NodSegment:
    """One detected nod interval [start, end) with its movement range."""

    start: float
    end: float
    nod_type: NodType | None = None
    amplitude: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.start < self.end):
            raise BoundsError(f"invalid segment [{self.start}, {self.end})")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class AnnotationConfig:
    """Thresholds for nod detection and typing.

    The hysteresis pair ``grad_on``/``grad_off`` prevents chatter;
    ``amp_split`` separates small from large movement ranges and
    ``swingup_min`` is the minimum pre-stroke rise for a long_p call.
    """

    smooth_window: int = 7
    grad_on: float = 0.15
    grad_off: float = 0.05
    min_duration: float = 0.1
    merge_gap: float = 0.08
    amp_split: float = 0.04
    swingup_min: float = 0.015
    offset: float = 0.5

    def __post_init__(self):
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise InvalidConfigError("smooth_window must be odd and >= 1")
        if not (self.grad_on > self.grad_off > 0):
            raise InvalidConfigError("need grad_on > grad_off > 0")
        if self.amp_split <= 0:
            raise InvalidConfigError("amp_split must be positive")
        if self.offset < 0:
            raise InvalidConfigError("offset must be >= 0")


@dataclass
class FrameLabels:
    """Per-frame ground truth at a fixed frame rate.

    ``nod_class`` holds class ids (0 = no nod), ``backchannel`` a boolean
    onset track, and ``vad`` one boolean voice-activity track per channel
    (row 0 = user/speaker, row 1 = system/listener).
    """

    frame_rate: float
    nod_class: np.ndarray
    backchannel: np.ndarray
    vad: np.ndarray

    def __post_init__(self):
        self.nod_class = np.asarray(self.nod_class, dtype=np.int64)
        self.backchannel = np.asarray(self.backchannel, dtype=bool)
        self.vad = np.asarray(self.vad, dtype=bool)
        n = len(self.nod_class)
        if len(self.backchannel) != n or self.vad.shape != (2, n):
            raise ShapeError("label tracks must share one frame count")

    @property
    def num_frames(self) -> int:
        return len(self.nod_class)


def downsample(trace: MotionTrace, target_rate: float = ANNOTATION_RATE_HZ) -> MotionTrace:
    """Resample a trace onto the target grid by linear interpolation.

    Rates below the target are refused rather than upsampled.
    """
    if trace.sample_rate < target_rate:
        raise UnsupportedRateError(
            f"sample rate {trace.sample_rate} Hz below required {target_rate} Hz"
        )
    if trace.sample_rate == target_rate:
        return trace
    n_out = int(np.floor(trace.duration * target_rate)) + 1
    t_in = np.arange(len(trace.pitch)) / trace.sample_rate
    t_out = np.arange(n_out) / target_rate
    pitch = np.interp(t_out, t_in, trace.pitch)
    return MotionTrace(target_rate, pitch, trace.start_time)


def smooth(trace: MotionTrace, window: int | None = None,
           cfg: AnnotationConfig | None = None) -> MotionTrace:
    """Centered moving average; the window shrinks symmetrically at edges."""
    if window is None:
        window = (cfg or AnnotationConfig()).smooth_window
    n = len(trace.pitch)
    if window < 1 or window % 2 == 0:
        raise InvalidConfigError("smoothing window must be odd and >= 1")
    if window > n:
        raise InvalidConfigError(f"smoothing window {window} exceeds trace length {n}")
    return MotionTrace(trace.sample_rate,
                       _shrinking_moving_average(trace.pitch, window),
                       trace.start_time)


def _shrinking_moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Moving average whose half-width shrinks to what both sides can supply."""
    if window == 1:
        return x.copy()
    n = len(x)
    half = window // 2
    csum = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(n)
    h = np.minimum(half, np.minimum(idx, n - 1 - idx))
    lo = idx - h
    hi = idx + h + 1
    return (csum[hi] - csum[lo]) / (hi - lo)


def pitch_rate(trace: MotionTrace, cfg: AnnotationConfig) -> np.ndarray:
    """Rate of change (rad/s) used for detection.

    Central differences followed by a second moving average with the same
    window; the extra pass keeps sample noise on the rate well below
    ``grad_off`` so segment boundaries stay stable.
    """
    grad = np.gradient(trace.pitch, 1.0 / trace.sample_rate)
    return _shrinking_moving_average(grad, cfg.smooth_window)


def detect_nod_segments(trace: MotionTrace, cfg: AnnotationConfig | None = None) -> list[NodSegment]:
    """Detect (untyped) nod segments in a smoothed 100 Hz trace.

    A segment opens when the downward rate exceeds ``grad_on`` and closes
    once ``|rate|`` has stayed below ``grad_off`` for ``merge_gap`` seconds;
    the recorded end is the last active sample. Segments closer than
    ``merge_gap`` are merged and those shorter than ``min_duration``
    discarded.
    """
    cfg = cfg or AnnotationConfig()
    rate = pitch_rate(trace, cfg)
    dt = 1.0 / trace.sample_rate
    gap_samples = max(1, int(round(cfg.merge_gap * trace.sample_rate)))

    raw: list[tuple[int, int]] = []
    open_idx = -1
    last_active = -1
    for i in range(len(rate)):
        if open_idx < 0:
            if rate[i] <= -cfg.grad_on:
                open_idx = i
                last_active = i
        else:
            if abs(rate[i]) >= cfg.grad_off:
                last_active = i
            elif i - last_active >= gap_samples:
                raw.append((open_idx, last_active))
                open_idx = -1
    if open_idx >= 0:
        raw.append((open_idx, last_active))

    # Merge openings separated by less than merge_gap.
    merged: list[list[int]] = []
    for s, e in raw:
        if merged and s - merged[-1][1] < gap_samples:
            merged[-1][1] = e
        else:
            merged.append([s, e])

    t0 = trace.start_time
    segments = []
    for s, e in merged:
        start = t0 + s * dt
        end = t0 + (e + 1) * dt
        if end - start < cfg.min_duration:
            continue
        amp = float(np.ptp(trace.pitch[s:e + 1]))
        segments.append(NodSegment(start, end, None, amp))
    return segments


def classify_nod_type(segment: NodSegment, trace: MotionTrace,
                      cfg: AnnotationConfig | None = None) -> NodType:
    """Assign one of the three nod types to a detected segment.

    Movement range below ``amp_split`` is short. Otherwise the opening
    phase (a lookback window before the segment start up to the segment
    midpoint) is scanned for an upward excursion of at least
    ``swingup_min`` relative to the window start; finding one makes the
    segment long_p, else long.
    """
    cfg = cfg or AnnotationConfig()
    t_first = trace.start_time
    t_last = trace.start_time + trace.duration
    if segment.start < t_first - 1e-9 or segment.end > t_last + 1e-9:
        raise BoundsError("segment lies outside the trace")

    if segment.amplitude < cfg.amp_split:
        return NodType.SHORT

    rate_hz = trace.sample_rate
    i_start = int(round((segment.start - t_first) * rate_hz))
    i_mid = int(round((segment.start + 0.5 * segment.duration - t_first) * rate_hz))
    i_lo = max(0, i_start - int(round(SWINGUP_LOOKBACK_S * rate_hz)))
    window = trace.pitch[i_lo:max(i_mid, i_lo + 1) + 1]
    rise = float(np.max(window) - window[0])
    if rise >= cfg.swingup_min:
        return NodType.LONG_P
    return NodType.LONG


def annotate_trace(trace: MotionTrace, cfg: AnnotationConfig | None = None) -> list[NodSegment]:
    """Full detection chain: downsample, smooth, detect, classify."""
    cfg = cfg or AnnotationConfig()
    prepared = smooth(downsample(trace), cfg.smooth_window)
    segments = detect_nod_segments(prepared, cfg)
    return [
        NodSegment(s.start, s.end, classify_nod_type(s, prepared, cfg), s.amplitude)
        for s in segments
    ]


def offset_segments(segments: list[NodSegment], offset: float) -> list[NodSegment]:
    """Shift segments ``offset`` seconds earlier, clipping at time zero."""
    if offset < 0:
        raise InvalidConfigError("offset must be >= 0")
    out = []
    for seg in segments:
        end = seg.end - offset
        if end <= 0:
            continue
        start = max(0.0, seg.start - offset)
        out.append(NodSegment(start, end, seg.nod_type, seg.amplitude))
    return out


def rasterize_frame_labels(
    segments: list[NodSegment],
    backchannel_segments: list[tuple[float, float]],
    vad_segments: tuple[list[tuple[float, float]], list[tuple[float, float]]],
    frame_rate: float,
    duration: float,
) -> FrameLabels:
    """Paint segments onto a frame grid.

    Frame ``i`` covers ``[i/f, (i+1)/f)`` and takes a segment's class when
    its center lies inside the segment. Overlapping nod segments resolve by
    priority long_p > long > short.
    """
    if duration < 0:
        raise BoundsError("duration must be >= 0")
    n = int(np.floor(duration * frame_rate + 1e-9))
    centers = (np.arange(n) + 0.5) / frame_rate

    nod_class = np.zeros(n, dtype=np.int64)
    by_priority = sorted(
        (s for s in segments if s.nod_type is not None),
        key=lambda s: NOD_CLASS_OF_TYPE[s.nod_type],
    )
    for seg in by_priority:
        inside = (centers >= seg.start) & (centers < seg.end)
        nod_class[inside] = NOD_CLASS_OF_TYPE[seg.nod_type]

    def paint(intervals):
        track = np.zeros(n, dtype=bool)
        for a, b in intervals:
            track |= (centers >= a) & (centers < b)
        return track

    backchannel = paint(backchannel_segments)
    vad = np.stack([paint(vad_segments[0]), paint(vad_segments[1])])
    return FrameLabels(frame_rate, nod_class, backchannel, vad)


def collapse_to_timing(labels: FrameLabels) -> FrameLabels:
    """Map typed classes to the two-class timing task (any nod -> 1)."""
    return FrameLabels(labels.frame_rate,
                       (labels.nod_class > 0).astype(np.int64),
                       labels.backchannel, labels.vad)


# ---------------------------------------------------------------------------
# File formats


def trace_from_csv(path: str | Path) -> MotionTrace:
    """Read a `time_s,pitch_rad` CSV with a monotone time column."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [c.strip() for c in header] != ["time_s", "pitch_rad"]:
            raise ShapeError(f"unexpected CSV header {header!r}")
        rows = [(float(t), float(p)) for t, p in reader]
    if not rows:
        raise EmptyTraceError(path)
    times = np.array([r[0] for r in rows])
    pitch = np.array([r[1] for r in rows])
    if len(times) > 1:
        if np.any(np.diff(times) <= 0):
            raise ShapeError("time column must be strictly increasing")
        rate = (len(times) - 1) / (times[-1] - times[0])
    else:
        rate = ANNOTATION_RATE_HZ
    return MotionTrace(rate, pitch, float(times[0]))


class EmptyTraceError(ShapeError):
    pass


def trace_to_csv(trace: MotionTrace, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "pitch_rad"])
        for t, p in zip(trace.times(), trace.pitch):
            writer.writerow([f"{t:.6f}", f"{p:.8f}"])


def segments_to_jsonl(segments: list[NodSegment], path: str | Path) -> None:
    """Write one `{"start", "end", "type"}` object per line.

    Times are rounded to 0.1 ms so output bytes do not depend on float
    representation quirks.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for seg in segments:
            obj = {
                "start": round(seg.start, 4),
                "end": round(seg.end, 4),
                "type": seg.nod_type.value if seg.nod_type else None,
            }
            fh.write(json.dumps(obj) + "\n")


def segments_from_jsonl(path: str | Path) -> list[NodSegment]:
    segments = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            nod_type = NodType(obj["type"]) if obj.get("type") else None
            segments.append(NodSegment(obj["start"], obj["end"], nod_type))
    return segments


def frame_labels_to_json(labels: FrameLabels, dialogue: str | None = None) -> str:
    obj = {
        "frame_rate": labels.frame_rate,
        "nod_class": labels.nod_class.tolist(),
        "backchannel": labels.backchannel.astype(int).tolist(),
        "vad_user": labels.vad[0].astype(int).tolist(),
        "vad_system": labels.vad[1].astype(int).tolist(),
    }
    if dialogue is not None:
        obj = {"dialogue": dialogue, **obj}
    return json.dumps(obj)


def frame_labels_from_json(line: str) -> tuple[str | None, FrameLabels]:
    obj = json.loads(line)
    labels = FrameLabels(
        obj["frame_rate"],
        np.array(obj["nod_class"]),
        np.array(obj["backchannel"], dtype=bool),
        np.stack([np.array(obj["vad_user"], dtype=bool),
                  np.array(obj["vad_system"], dtype=bool)]),
    )
    return obj.get("dialogue"), labels
