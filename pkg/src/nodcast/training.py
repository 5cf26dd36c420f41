"""Training loop: window batching, losses, analytic gradients, plain SGD.

Two stages mirror the intended workflow: ``pretrain`` optimizes only the
voice-activity detection and projection terms (no nod or backchannel
labels needed), ``finetune`` optimizes the full single- or multi-task
objective depending on the model config. A batch is one dialogue window;
windows are sampled with 50% overlap and shuffled per epoch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from nodcast import nn
from nodcast.datasets import DialogueData
from nodcast.errors import InvalidConfigError, TrainingDivergedError
from nodcast.frontend import frame_count
from nodcast.losses import (
    LossWeights,
    nod_class_weights,
    weighted_bce_logits,
    weighted_softmax_ce,
)
from nodcast.model import NodPredictor

STAGES = ("pretrain", "finetune")
GRAD_CLIP_NORM = 1.0

LOG_FIELDS = ("epoch", "stage", "loss", "loss_nod", "loss_vad", "loss_vap", "loss_bc")


@dataclass
class EpochStats:
    epoch: int
    stage: str
    loss: float
    loss_nod: float
    loss_vad: float
    loss_vap: float
    loss_bc: float

    def row(self):
        return [self.epoch, self.stage, f"{self.loss:.6f}", f"{self.loss_nod:.6f}",
                f"{self.loss_vad:.6f}", f"{self.loss_vap:.6f}", f"{self.loss_bc:.6f}"]


def window_starts(num_frames: int, window: int, hop: int) -> list[int]:
    if num_frames <= window:
        return [0]
    starts = list(range(0, num_frames - window + 1, hop))
    if starts[-1] != num_frames - window:
        starts.append(num_frames - window)
    return starts


def window_loss(model: NodPredictor, dlg: DialogueData, start: int, window: int,
                stage: str, weights: LossWeights, with_grads: bool):
    """Loss (and gradients) for one dialogue window."""
    cfg = model.cfg
    end = min(start + window, dlg.num_frames)
    u = dlg.user_emb[start:end]
    s = dlg.system_emb[start:end]
    logits, cache = model.forward_logits(u, s, with_cache=with_grads)

    l_vad, d_vad = weighted_bce_logits(logits["vad"], dlg.vad.T[start:end].astype(float))
    l_vap, d_vap = weighted_softmax_ce(logits["vap"], dlg.vap_target[start:end],
                                       np.ones(cfg.vap_states))
    parts = {"loss_vad": l_vad, "loss_vap": l_vap, "loss_nod": 0.0, "loss_bc": 0.0}
    dlogits = {"vad": weights.w_vad * d_vad, "vap": weights.w_vap * d_vap,
               "nod": np.zeros_like(logits["nod"])}
    total = weights.w_vad * l_vad + weights.w_vap * l_vap

    if stage == "finetune":
        if dlg.nod_class is None:
            raise InvalidConfigError(f"dialogue {dlg.name} has no nod labels")
        cw = nod_class_weights(cfg.nod_classes, weights.pos_weight_for(cfg.nod_classes))
        l_nod, d_nod = weighted_softmax_ce(logits["nod"], dlg.nod_class[start:end], cw)
        parts["loss_nod"] = l_nod
        dlogits["nod"] = d_nod
        total += l_nod
        if cfg.multitask_bc:
            if dlg.backchannel is None:
                raise InvalidConfigError(f"dialogue {dlg.name} has no backchannel labels")
            l_bc, d_bc = weighted_bce_logits(logits["bc"], dlg.backchannel[start:end],
                                             weights.pos_weight_timing)
            parts["loss_bc"] = l_bc
            dlogits["bc"] = weights.w_bc * d_bc
            total += weights.w_bc * l_bc

    if not with_grads:
        return total, parts, None
    return total, parts, model.backward(cache, dlogits)


def train(model: NodPredictor, dataset: list[DialogueData], stage: str,
          epochs: int, lr: float, weights: LossWeights | None = None,
          seed: int = 0, log_path=None, callback=None) -> NodPredictor:
    """Run SGD over dialogue windows; mutates and returns the model.

    Per-epoch mean losses are appended to ``log_path`` as CSV when given;
    ``callback(model, stats)`` may return True to stop early. Gradients are
    clipped to global norm 1.0. A non-finite loss aborts with diagnostics.
    """
    if stage not in STAGES:
        raise InvalidConfigError(f"unknown stage {stage!r}")
    if not dataset:
        raise InvalidConfigError("empty dataset")
    weights = weights or LossWeights()
    cfg = model.cfg
    window = frame_count(cfg.window_seconds, cfg.frame_rate)
    hop = max(1, window // 2)
    pairs = [(i, s) for i, dlg in enumerate(dataset)
             for s in window_starts(dlg.num_frames, window, hop)]
    rng = np.random.default_rng(np.random.SeedSequence([seed, STAGES.index(stage)]))

    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(pairs))
        sums = {"loss": 0.0, "loss_nod": 0.0, "loss_vad": 0.0,
                "loss_vap": 0.0, "loss_bc": 0.0}
        for j in order:
            dlg_idx, start = pairs[j]
            total, parts, grads = window_loss(model, dataset[dlg_idx], start,
                                              window, stage, weights, True)
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, dialogue "
                    f"{dataset[dlg_idx].name}, window start {start}: {parts}")
            nn.clip_grads(grads, GRAD_CLIP_NORM)
            for key, g in grads.items():
                model.params[key] -= lr * g
            sums["loss"] += total
            for key in parts:
                sums[key] += parts[key]
        n = len(pairs)
        stats = EpochStats(epoch, stage, sums["loss"] / n, sums["loss_nod"] / n,
                           sums["loss_vad"] / n, sums["loss_vap"] / n,
                           sums["loss_bc"] / n)
        history.append(stats)
        if log_path is not None:
            _append_log(log_path, stats)
        if callback is not None and callback(model, stats):
            break
    return model


def _append_log(path, stats: EpochStats) -> None:
    new = not _file_exists_nonempty(path)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(LOG_FIELDS)
        writer.writerow(stats.row())


def _file_exists_nonempty(path) -> bool:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return bool(fh.readline())
    except FileNotFoundError:
        return False


def mean_dataset_loss(model: NodPredictor, dataset: list[DialogueData], stage: str,
                      weights: LossWeights | None = None) -> float:
    """Current mean window loss without updating weights."""
    weights = weights or LossWeights()
    window = frame_count(model.cfg.window_seconds, model.cfg.frame_rate)
    hop = max(1, window // 2)
    losses = [
        window_loss(model, dlg, s, window, stage, weights, False)[0]
        for dlg in dataset for s in window_starts(dlg.num_frames, window, hop)
    ]
    return float(np.mean(losses))


def predict_classes(model: NodPredictor, dlg: DialogueData) -> np.ndarray:
    """Per-frame argmax nod classes from half-overlapping windows.

    Windows hop by half a window and only their warm (second) half is kept,
    except at the dialogue start, so no frame is scored with a cold
    context.
    """
    window = frame_count(model.cfg.window_seconds, model.cfg.frame_rate)
    hop = max(1, window // 2)
    n = dlg.num_frames
    out = np.zeros(n, dtype=np.int64)
    start = 0
    while start < n:
        end = min(start + window, n)
        outputs = model.forward(dlg.user_emb[start:end], dlg.system_emb[start:end])
        classes = outputs.p_nod.argmax(axis=1)
        keep_from = 0 if start == 0 else hop
        out[start + keep_from:end] = classes[keep_from:]
        if end == n:
            break
        start += hop
    return out
