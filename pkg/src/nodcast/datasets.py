"""Dataset files and in-memory training data.

A dataset is a directory with one WAV + motion CSV + segments JSONL per
dialogue and a ``manifest.json`` listing them. Segment files extend the
annotation format's ``type`` field with ``backchannel``, ``vad_user``, and
``vad_system`` kinds so one rate-independent file carries all ground truth.

Loading a dialogue for training embeds the full audio once (the frontend
is frozen, so embeddings never change), applies the label offset to nod
and backchannel segments, rasterizes everything at the model frame rate,
and precomputes per-frame projection targets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nodcast.annotation import (
    AnnotationConfig,
    FrameLabels,
    NodSegment,
    NodType,
    annotate_trace,
    collapse_to_timing,
    frame_labels_to_json,
    offset_segments,
    rasterize_frame_labels,
    trace_from_csv,
    trace_to_csv,
)
from nodcast.audio_io import AUDIO_RATE_HZ, read_wav_stereo, write_wav_stereo
from nodcast.errors import InvalidConfigError
from nodcast.frontend import encode_samples, frame_count
from nodcast.model import ModelConfig, vap_frame_targets
from nodcast.synth import SyntheticDialogue, SyntheticDialogueConfig, generate_synthetic_dialogue

_SEGMENT_KINDS = ("backchannel", "vad_user", "vad_system")


@dataclass
class DialogueData:
    """One dialogue ready for training/evaluation at a fixed frame rate."""

    name: str
    user_emb: np.ndarray
    system_emb: np.ndarray
    nod_class: np.ndarray | None
    backchannel: np.ndarray | None
    vad: np.ndarray
    vap_target: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.user_emb.shape[0]


def write_segment_file(path, nod_segments, backchannel_segments,
                       vad_user_segments, vad_system_segments) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seg in nod_segments:
            fh.write(json.dumps({"start": round(seg.start, 4), "end": round(seg.end, 4),
                                 "type": seg.nod_type.value}) + "\n")
        for kind, spans in (("backchannel", backchannel_segments),
                            ("vad_user", vad_user_segments),
                            ("vad_system", vad_system_segments)):
            for a, b in spans:
                fh.write(json.dumps({"start": round(a, 4), "end": round(b, 4),
                                     "type": kind}) + "\n")


def read_segment_file(path):
    nods, extra = [], {kind: [] for kind in _SEGMENT_KINDS}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj["type"] in _SEGMENT_KINDS:
                extra[obj["type"]].append((obj["start"], obj["end"]))
            else:
                nods.append(NodSegment(obj["start"], obj["end"], NodType(obj["type"])))
    return nods, extra["backchannel"], extra["vad_user"], extra["vad_system"]


def build_frame_labels(nod_segments, backchannel_segments, vad_user, vad_system,
                       frame_rate: float, duration: float,
                       ann_cfg: AnnotationConfig) -> FrameLabels:
    """Offset nod/backchannel segments earlier, then rasterize.

    Voice-activity tracks describe the present and are not offset.
    """
    nods = offset_segments(nod_segments, ann_cfg.offset)
    bc = [(max(0.0, a - ann_cfg.offset), b - ann_cfg.offset)
          for a, b in backchannel_segments if b - ann_cfg.offset > 0]
    return rasterize_frame_labels(nods, bc, (vad_user, vad_system),
                                  frame_rate, duration)


def energy_vad(audio: np.ndarray, frame_rate: int, threshold: float = 0.01) -> np.ndarray:
    """Per-frame RMS gate on each channel; (2, frames) booleans."""
    hop = AUDIO_RATE_HZ // frame_rate
    n = (audio.shape[0] // hop) * hop
    frames = audio[:n].reshape(-1, hop, 2)
    rms = np.sqrt((frames ** 2).mean(axis=1))
    return (rms > threshold).T


# --- synthetic dataset on disk ----------------------------------------

def write_synthetic_dataset(outdir, count: int, base_cfg: SyntheticDialogueConfig,
                            labels_frame_rate: float = 10.0,
                            ann_cfg: AnnotationConfig | None = None) -> Path:
    """Render ``count`` dialogues plus manifest and offset frame labels.

    Returns the manifest path. Dialogue seeds derive from the base config's
    seed so the whole dataset is reproducible.
    """
    ann_cfg = ann_cfg or AnnotationConfig()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    label_lines = []
    for i in range(count):
        name = f"dlg_{i:03d}"
        cfg = SyntheticDialogueConfig(**{**base_cfg.__dict__,
                                         "seed": base_cfg.seed * 10007 + i})
        dialogue = generate_synthetic_dialogue(cfg)
        write_wav_stereo(outdir / f"{name}.wav", dialogue.audio)
        trace_to_csv(dialogue.trace, outdir / f"{name}_motion.csv")
        plan = dialogue.plan
        write_segment_file(outdir / f"{name}_segments.jsonl", plan.nod_segments,
                           plan.backchannel_segments, plan.vad_user_segments,
                           plan.vad_system_segments)
        entries.append({"name": name, "wav": f"{name}.wav",
                        "motion_csv": f"{name}_motion.csv",
                        "segments": f"{name}_segments.jsonl"})
        labels = build_frame_labels(plan.nod_segments, plan.backchannel_segments,
                                    plan.vad_user_segments, plan.vad_system_segments,
                                    labels_frame_rate, plan.duration, ann_cfg)
        label_lines.append(frame_labels_to_json(labels, dialogue=name))

    manifest = outdir / "manifest.json"
    manifest.write_text(json.dumps({"dialogues": entries}, indent=2) + "\n",
                        encoding="utf-8")
    (outdir / "labels.jsonl").write_text("\n".join(label_lines) + "\n",
                                         encoding="utf-8")
    return manifest


def load_manifest(path):
    path = Path(path)
    entries = json.loads(path.read_text(encoding="utf-8"))["dialogues"]
    if not entries:
        raise InvalidConfigError("manifest lists no dialogues")
    return path.parent, entries


def load_dialogue(root: Path, entry: dict, model_cfg: ModelConfig,
                  ann_cfg: AnnotationConfig | None = None) -> DialogueData:
    """Embed audio and rasterize labels for one manifest entry.

    Ground truth comes from the segments file when present; otherwise nod
    segments are detected from the motion CSV and voice activity falls
    back to an energy gate on the audio (no backchannel labels then).
    """
    ann_cfg = ann_cfg or AnnotationConfig()
    audio = read_wav_stereo(root / entry["wav"])
    frames = frame_count(audio.shape[0] / AUDIO_RATE_HZ, model_cfg.frame_rate)
    hop = AUDIO_RATE_HZ // model_cfg.frame_rate
    audio = audio[:frames * hop]
    duration = frames / model_cfg.frame_rate

    if entry.get("segments"):
        nods, bc, vad_user, vad_system = read_segment_file(root / entry["segments"])
    elif entry.get("motion_csv"):
        nods = annotate_trace(trace_from_csv(root / entry["motion_csv"]), ann_cfg)
        bc = []
        vad = energy_vad(audio, model_cfg.frame_rate)
        vad_user = _mask_to_segments(vad[0], model_cfg.frame_rate)
        vad_system = _mask_to_segments(vad[1], model_cfg.frame_rate)
    else:
        raise InvalidConfigError(f"dialogue {entry.get('name')} has no label source")

    labels = build_frame_labels(nods, bc, vad_user, vad_system,
                                model_cfg.frame_rate, duration, ann_cfg)
    if model_cfg.nod_classes == 2:
        labels = collapse_to_timing(labels)

    return DialogueData(
        name=entry.get("name", entry["wav"]),
        user_emb=encode_samples(audio[:, 0], model_cfg),
        system_emb=encode_samples(audio[:, 1], model_cfg),
        nod_class=labels.nod_class,
        backchannel=labels.backchannel.astype(np.float64),
        vad=labels.vad,
        vap_target=vap_frame_targets(labels.vad, model_cfg.vap_bins,
                                     model_cfg.frame_rate),
    )


def load_dataset(manifest_path, model_cfg: ModelConfig,
                 ann_cfg: AnnotationConfig | None = None) -> list[DialogueData]:
    root, entries = load_manifest(manifest_path)
    return [load_dialogue(root, e, model_cfg, ann_cfg) for e in entries]


def _mask_to_segments(mask: np.ndarray, frame_rate: float):
    """Boolean frame mask -> list of (start_s, end_s) runs."""
    spans = []
    start = None
    for i, active in enumerate(mask):
        if active and start is None:
            start = i
        elif not active and start is not None:
            spans.append((start / frame_rate, i / frame_rate))
            start = None
    if start is not None:
        spans.append((start / frame_rate, len(mask) / frame_rate))
    return spans
