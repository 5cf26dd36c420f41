"""Loss functions for the multi-task objective.

The total loss is the nod cross-entropy plus weighted voice-activity
detection and projection terms, with an optional weighted backchannel term
in the multi-task variant:

    L = L_nod + w_vad * L_vad + w_vap * L_vap [+ w_bc * L_bc]

Class imbalance is handled by scaling positive-frame losses: x3 for the
two-class timing task (and backchannel), x5 for the four-class type task.

Two equivalent entry points exist for each cross-entropy: a reference form
on probabilities (`loss_nod`, `loss_vad`, ...) and a logit form used by
training that also returns the gradient with respect to the logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nodcast import nn
from nodcast.errors import InvalidConfigError, ShapeError

LOG_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    w_vad: float = 0.2
    w_vap: float = 0.2
    w_bc: float = 0.5
    pos_weight_timing: float = 3.0
    pos_weight_type: float = 5.0

    def __post_init__(self):
        if min(self.w_vad, self.w_vap, self.w_bc,
               self.pos_weight_timing, self.pos_weight_type) < 0:
            raise InvalidConfigError("loss weights must be >= 0")

    def pos_weight_for(self, nod_classes: int) -> float:
        return self.pos_weight_timing if nod_classes == 2 else self.pos_weight_type


# --- reference (probability-space) forms --------------------------------

def loss_nod(o_nod, r_nod, pos_weight: float) -> float:
    """Weighted categorical cross-entropy, -w(c*) log o[c*], frame-averaged.

    ``o_nod``/``r_nod`` are (C,) or (frames, C); r_nod rows are one-hot.
    The positive weight applies to every class except class 0 (no nod).
    """
    o = np.atleast_2d(np.asarray(o_nod, dtype=float))
    r = np.atleast_2d(np.asarray(r_nod, dtype=float))
    if o.shape != r.shape:
        raise ShapeError("o_nod and r_nod must have the same shape")
    true_class = r.argmax(axis=1)
    p_true = np.maximum(o[np.arange(len(o)), true_class], LOG_EPS)
    w = np.where(true_class > 0, pos_weight, 1.0)
    return float(np.mean(-w * np.log(p_true)))


def loss_bc(p_bc, bc_labels, pos_weight: float = 3.0) -> float:
    """Weighted binary cross-entropy on backchannel-onset probabilities."""
    p = np.clip(np.asarray(p_bc, dtype=float), LOG_EPS, 1 - LOG_EPS)
    y = np.asarray(bc_labels, dtype=float)
    w = np.where(y > 0, pos_weight, 1.0)
    return float(np.mean(-w * (y * np.log(p) + (1 - y) * np.log(1 - p))))


def loss_vad(p_vad, vad_labels) -> float:
    """Binary cross-entropy, averaged over frames and both channels."""
    p = np.clip(np.asarray(p_vad, dtype=float), LOG_EPS, 1 - LOG_EPS)
    y = np.asarray(vad_labels, dtype=float)
    if p.shape != y.shape:
        raise ShapeError("p_vad and labels must have the same shape")
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def loss_vap(p_vap, vap_state_labels) -> float:
    """Categorical cross-entropy over the 256 future-activity states."""
    p = np.atleast_2d(np.asarray(p_vap, dtype=float))
    labels = np.atleast_1d(np.asarray(vap_state_labels, dtype=int))
    p_true = np.maximum(p[np.arange(len(labels)), labels], LOG_EPS)
    return float(np.mean(-np.log(p_true)))


def loss_total_st(l_nod: float, l_vad: float, l_vap: float,
                  w: LossWeights = LossWeights()) -> float:
    return l_nod + w.w_vad * l_vad + w.w_vap * l_vap


def loss_total_mt(l_nod: float, l_vad: float, l_vap: float, l_bc: float,
                  w: LossWeights = LossWeights()) -> float:
    return loss_total_st(l_nod, l_vad, l_vap, w) + w.w_bc * l_bc


# --- logit-space forms with gradients --------------------------------

def weighted_softmax_ce(logits, targets, class_weights):
    """Frame-averaged weighted CE from logits.

    ``targets`` may contain -1 to exclude a frame (used for the tail
    frames whose projection horizon runs past the dialogue end). Returns
    (loss, dlogits); dlogits rows for excluded frames are zero.
    """
    logits = np.atleast_2d(logits)
    targets = np.asarray(targets, dtype=int)
    valid = targets >= 0
    n = int(valid.sum())
    if n == 0:
        return 0.0, np.zeros_like(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    safe_targets = np.where(valid, targets, 0)
    w = np.asarray(class_weights, dtype=float)[safe_targets] * valid
    loss = float(-(w * logp[np.arange(len(targets)), safe_targets]).sum() / n)

    probs = np.exp(logp)
    onehot = np.zeros_like(logits)
    onehot[np.arange(len(targets)), safe_targets] = 1.0
    dlogits = (w / n)[:, None] * (probs - onehot)
    return loss, dlogits


def weighted_bce_logits(logits, targets, pos_weight: float = 1.0):
    """Element-averaged weighted binary CE from logits; returns (loss, dlogits)."""
    z = np.asarray(logits, dtype=float)
    y = np.asarray(targets, dtype=float)
    if z.shape != y.shape:
        raise ShapeError("logits and targets must have the same shape")
    w = np.where(y > 0, pos_weight, 1.0)
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = float(np.mean(w * per))
    dlogits = w * (nn.sigmoid(z) - y) / z.size
    return loss, dlogits


def nod_class_weights(nod_classes: int, pos_weight: float) -> np.ndarray:
    w = np.full(nod_classes, pos_weight)
    w[0] = 1.0
    return w
