"""Synthetic dialogue generation for training and testing.

Builds attentive-listening dialogues from scratch: a speaker channel that
alternates speech-like bursts and pauses, a listener channel carrying short
backchannel tokens, and a head-pitch motion trace containing typed nods.

Every nod is anchored to an audible cue in the speaker channel (an
amplitude dip inside a burst, or the burst-final fade-out) and starts a
fixed lead time after the cue onset, so that a model predicting that far
ahead has something to learn from. Cue shapes differ per nod type:

- decoy (no nod): very shallow dip
- short:          single medium dip
- long:           single deep dip
- long_p:         double deep dip

Nod placement is paced against per-type time budgets so that realized
nod-time ratios converge to the configured targets over long runs, with
burst-final cues served first (nods cluster near burst ends).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nodcast.annotation import ANNOTATION_RATE_HZ, MotionTrace, NodSegment, NodType
from nodcast.errors import InvalidConfigError

AUDIO_RATE_HZ = 16000

# Lead time between a cue onset and the nod it announces. Matches the
# default label offset so that offset labels align with their cues.
CUE_LEAD_S = 0.5

_MIN_NOD_GAP_S = 0.3
_DIP_SHAPES = {
    None: (0.30, 0.15, 1),            # decoy: (depth, dip duration, count)
    NodType.SHORT: (0.60, 0.20, 1),
    NodType.LONG: (0.95, 0.30, 1),
    NodType.LONG_P: (0.95, 0.22, 2),
}


@dataclass(frozen=True)
class SyntheticDialogueConfig:
    """Knobs for the dialogue generator.

    ``nod_time_ratios`` are target fractions of total time covered by
    (short, long, long_p) nods; the defaults follow the distribution of a
    desk-scale attentive-listening corpus.
    """

    duration: float = 60.0
    nod_time_ratios: tuple[float, float, float] = (0.089, 0.124, 0.044)
    bc_cooccur_prob: float = 0.6
    burst_dur: tuple[float, float] = (2.0, 4.5)
    pause_dur: tuple[float, float] = (0.7, 1.5)
    cue_interval: tuple[float, float] = (0.9, 1.5)
    speech_level: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise InvalidConfigError("duration must be positive")
        if any(r < 0 for r in self.nod_time_ratios) or sum(self.nod_time_ratios) >= 1:
            raise InvalidConfigError("nod_time_ratios must be non-negative and sum below 1")
        if not (0 <= self.bc_cooccur_prob <= 1):
            raise InvalidConfigError("bc_cooccur_prob must be a probability")


@dataclass
class CuePlan:
    """One audible cue and the nod (if any) it announces."""

    time: float                      # cue onset on the dialogue clock
    nod_type: NodType | None
    burst_final: bool = False


@dataclass
class DialoguePlan:
    """Everything needed to render audio, motion, and labels."""

    duration: float
    bursts: list[tuple[float, float]] = field(default_factory=list)
    cues: list[CuePlan] = field(default_factory=list)
    nod_segments: list[NodSegment] = field(default_factory=list)
    nod_params: list[dict] = field(default_factory=list)
    backchannel_segments: list[tuple[float, float]] = field(default_factory=list)

    @property
    def vad_user_segments(self) -> list[tuple[float, float]]:
        return list(self.bursts)

    @property
    def vad_system_segments(self) -> list[tuple[float, float]]:
        return list(self.backchannel_segments)

    def nod_time_ratios(self) -> tuple[float, float, float]:
        totals = {t: 0.0 for t in NodType}
        for seg in self.nod_segments:
            totals[seg.nod_type] += seg.duration
        return tuple(totals[t] / self.duration
                     for t in (NodType.SHORT, NodType.LONG, NodType.LONG_P))


@dataclass
class SyntheticDialogue:
    """Rendered dialogue; iterates as (audio, trace, backchannel segments)."""

    audio: np.ndarray                # (samples, 2) float64 in [-1, 1]
    trace: MotionTrace
    backchannel_segments: list[tuple[float, float]]
    plan: DialoguePlan

    def __iter__(self):
        return iter((self.audio, self.trace, self.backchannel_segments))


def _draw_nod_params(nod_type: NodType, rng: np.random.Generator) -> dict:
    """Waveform parameters for one nod, sized to stay detectable.

    Durations are canonical per type with only a small jitter so that a
    predictor hearing the cue can infer how long the nod lasts.
    """
    jitter = rng.uniform(-0.05, 0.05)
    if nod_type is NodType.SHORT:
        return {"type": nod_type, "amplitude": rng.uniform(0.022, 0.034),
                "dip_dur": 0.5 + jitter, "cycles": 2, "swing": 0.0}
    if nod_type is NodType.LONG:
        return {"type": nod_type, "amplitude": rng.uniform(0.06, 0.11),
                "dip_dur": 1.3 + jitter, "cycles": int(rng.integers(2, 4)),
                "swing": 0.0}
    return {"type": nod_type, "amplitude": rng.uniform(0.06, 0.11),
            "dip_dur": 1.3 + jitter, "cycles": int(rng.integers(2, 4)),
            "swing": rng.uniform(0.025, 0.04), "swing_dur": 0.38}


def nod_duration(params: dict) -> float:
    """Total footprint of a nod waveform on the time axis."""
    dur = params["dip_dur"]
    if params.get("swing", 0.0) > 0:
        dur += 0.6 * params["swing_dur"]
    return dur


def nod_pitch_waveform(params: dict, rate_hz: float = ANNOTATION_RATE_HZ) -> np.ndarray:
    """Additive pitch contribution of one nod, starting at sample 0.

    The downstroke is a raised-cosine train (``cycles`` dips over
    ``dip_dur``); a long_p nod prepends an upward sin^2 swing whose tail
    overlaps the start of the train.
    """
    swing = params.get("swing", 0.0)
    n_total = int(round(nod_duration(params) * rate_hz)) + 1
    wave = np.zeros(n_total)
    train_offset = 0
    if swing > 0:
        d_b = params["swing_dur"]
        n_b = int(round(d_b * rate_hz)) + 1
        t_b = np.arange(n_b) / rate_hz
        wave[:n_b] += swing * np.sin(np.pi * t_b / d_b) ** 2
        train_offset = int(round(0.6 * d_b * rate_hz))
    d = params["dip_dur"]
    k = params["cycles"]
    n_d = int(round(d * rate_hz)) + 1
    t_d = np.arange(n_d) / rate_hz
    dip = -0.5 * params["amplitude"] * (1 - np.cos(2 * np.pi * k * t_d / d))
    wave[train_offset:train_offset + n_d] += dip[:n_total - train_offset]
    return wave


def plan_synthetic_dialogue(cfg: SyntheticDialogueConfig,
                            rng: np.random.Generator | None = None) -> DialoguePlan:
    """Lay out bursts, cues, nods, and backchannels on the timeline."""
    rng = rng or np.random.default_rng(cfg.seed)
    plan = DialoguePlan(duration=cfg.duration)

    # Burst/pause timeline with candidate cues.
    t = rng.uniform(0.2, 0.6)
    candidates: list[tuple[float, bool]] = []
    while t < cfg.duration - 1.0:
        burst_len = rng.uniform(*cfg.burst_dur)
        end = min(t + burst_len, cfg.duration - 0.2)
        plan.bursts.append((t, end))
        # Leave a quiet zone before the fade so burst-final cues are not
        # blocked by a still-running mid-burst nod.
        c = t + rng.uniform(*cfg.cue_interval)
        while c < end - 2.2:
            candidates.append((c, False))
            c += rng.uniform(*cfg.cue_interval)
        candidates.append((end - 0.35, True))   # fade-out onset
        t = end + rng.uniform(*cfg.pause_dur)

    # Pace nod placement against per-type time budgets.
    ratios = dict(zip((NodType.SHORT, NodType.LONG, NodType.LONG_P),
                      cfg.nod_time_ratios))
    bias_mid = {NodType.SHORT: 3.0, NodType.LONG: 1.0, NodType.LONG_P: 0.6}
    bias_final = {NodType.SHORT: 0.5, NodType.LONG: 1.0, NodType.LONG_P: 1.2}
    spent = {ty: 0.0 for ty in NodType}
    occupied_until = 0.0
    for c_time, is_final in sorted(candidates):
        nod_start = c_time + CUE_LEAD_S
        chosen = None
        params = None
        deficits = {ty: ratios[ty] * c_time - spent[ty] for ty in NodType}
        behind = [ty for ty in NodType if deficits[ty] > 0]
        if behind and nod_start >= occupied_until + _MIN_NOD_GAP_S:
            bias = bias_final if is_final else bias_mid
            weights = np.array([bias[ty] * deficits[ty] for ty in behind])
            chosen = behind[int(rng.choice(len(behind), p=weights / weights.sum()))]
            params = _draw_nod_params(chosen, rng)
            if nod_start + nod_duration(params) > cfg.duration - 0.1:
                chosen, params = None, None
        plan.cues.append(CuePlan(c_time, chosen, is_final))
        if chosen is None:
            continue
        dur = nod_duration(params)
        seg = NodSegment(nod_start, nod_start + dur, chosen)
        plan.nod_segments.append(seg)
        plan.nod_params.append(params)
        spent[chosen] += dur
        occupied_until = seg.end
        if chosen in (NodType.LONG, NodType.LONG_P) and rng.random() < cfg.bc_cooccur_prob:
            bc_start = nod_start + rng.uniform(0.0, 0.1)
            plan.backchannel_segments.append((bc_start, bc_start + 0.35))
    return plan


def render_motion(plan: DialoguePlan, rng: np.random.Generator,
                  noise_sigma: float = 0.001) -> MotionTrace:
    """Head-pitch trace at 100 Hz: slow drift + noise + nod waveforms."""
    n = int(round(plan.duration * ANNOTATION_RATE_HZ)) + 1
    tt = np.arange(n) / ANNOTATION_RATE_HZ
    pitch = 0.003 * np.sin(2 * np.pi * tt / 23.0 + rng.uniform(0, 2 * np.pi))
    pitch += rng.normal(0.0, noise_sigma, n)
    for seg, params in zip(plan.nod_segments, plan.nod_params):
        wave = nod_pitch_waveform(params)
        i0 = int(round(seg.start * ANNOTATION_RATE_HZ))
        i1 = min(i0 + len(wave), n)
        pitch[i0:i1] += wave[:i1 - i0]
    return MotionTrace(ANNOTATION_RATE_HZ, pitch, 0.0)


def _burst_envelope(n: int, rng: np.random.Generator) -> np.ndarray:
    """Syllabic amplitude modulation with a short attack."""
    tt = np.arange(n) / AUDIO_RATE_HZ
    env = 0.75 + 0.25 * np.sin(2 * np.pi * 3.7 * tt + rng.uniform(0, 2 * np.pi))
    attack = int(0.05 * AUDIO_RATE_HZ)
    env[:attack] *= np.linspace(0.0, 1.0, attack)
    return env


def _apply_dip(env: np.ndarray, onset: int, nod_type: NodType | None) -> None:
    """Carve the cue signature (single or double dip) into an envelope."""
    depth, dip_dur, count = _DIP_SHAPES[nod_type]
    n_dip = int(dip_dur * AUDIO_RATE_HZ)
    for rep in range(count):
        i0 = onset + rep * int(1.15 * n_dip)
        i1 = min(i0 + n_dip, len(env))
        if i0 >= len(env):
            break
        t_rel = np.arange(i1 - i0) / max(1, n_dip - 1)
        env[i0:i1] *= 1.0 - depth * np.sin(np.pi * np.clip(t_rel, 0, 1)) ** 2


def _backchannel_token(rng: np.random.Generator | None = None,
                       duration: float = 0.35, level: float = 0.3) -> np.ndarray:
    """Two-syllable noise token used for listener backchannels."""
    rng = rng or np.random.default_rng(1234)
    n = int(duration * AUDIO_RATE_HZ)
    tt = np.arange(n) / duration / AUDIO_RATE_HZ
    env = np.sin(np.pi * np.clip(tt * 2, 0, 1)) ** 2 + np.sin(np.pi * np.clip(tt * 2 - 1, 0, 1)) ** 2
    return level * env * rng.standard_normal(n) * 0.5


def render_audio(plan: DialoguePlan, cfg: SyntheticDialogueConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Stereo waveform: channel 0 = speaker bursts, channel 1 = listener."""
    n = int(round(plan.duration * AUDIO_RATE_HZ))
    audio = rng.normal(0.0, 1e-4, (n, 2))

    for b_start, b_end in plan.bursts:
        i0, i1 = int(b_start * AUDIO_RATE_HZ), min(int(b_end * AUDIO_RATE_HZ), n)
        env = _burst_envelope(i1 - i0, rng)
        for cue in plan.cues:
            if b_start <= cue.time < b_end:
                if cue.burst_final:
                    fade = min(int(0.35 * AUDIO_RATE_HZ), len(env))
                    ramp = np.cos(0.5 * np.pi * np.arange(fade) / fade) ** 2
                    env[len(env) - fade:] *= ramp
                    if cue.nod_type is not None:
                        _apply_dip(env, int((cue.time - b_start - 0.3) * AUDIO_RATE_HZ),
                                   cue.nod_type)
                else:
                    _apply_dip(env, int((cue.time - b_start) * AUDIO_RATE_HZ), cue.nod_type)
        audio[i0:i1, 0] += cfg.speech_level * env * rng.standard_normal(i1 - i0) * 0.5

    for bc_start, bc_end in plan.backchannel_segments:
        token = _backchannel_token(rng, duration=bc_end - bc_start)
        i0 = int(bc_start * AUDIO_RATE_HZ)
        i1 = min(i0 + len(token), n)
        audio[i0:i1, 1] += token[:i1 - i0]

    return np.clip(audio, -1.0, 1.0)


def generate_synthetic_dialogue(cfg: SyntheticDialogueConfig) -> SyntheticDialogue:
    """Plan and render one dialogue (audio, motion trace, backchannels)."""
    rng = np.random.default_rng(cfg.seed)
    plan = plan_synthetic_dialogue(cfg, rng)
    trace = render_motion(plan, rng)
    audio = render_audio(plan, cfg, rng)
    return SyntheticDialogue(audio, trace, list(plan.backchannel_segments), plan)
