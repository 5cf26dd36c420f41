"""Brute-force reference implementations used only by the test suite.

These are deliberately independent of the package code paths they check:
plain loops and numpy.gradient instead of the library's vectorized or
stateful implementations.
"""

from __future__ import annotations

import numpy as np


def moving_average_loop(x, window):
    """Shrinking-window centered moving average, one frame at a time."""
    n = len(x)
    half = window // 2
    out = np.empty(n)
    for i in range(n):
        h = min(half, i, n - 1 - i)
        out[i] = np.mean(x[i - h:i + h + 1])
    return out


def detect_segments_scan(pitch, rate_hz, cfg):
    """Gradient-threshold nod detection by direct scanning.

    Smooths with the loop-based moving average, takes numpy.gradient, and
    walks the samples applying the open/close rules literally. Returns
    (start_s, end_s) pairs.
    """
    sm = moving_average_loop(np.asarray(pitch, dtype=float), cfg.smooth_window)
    grad = np.gradient(sm, 1.0 / rate_hz)
    gap = int(round(cfg.merge_gap * rate_hz))
    n = len(grad)

    raw = []
    i = 0
    while i < n:
        if grad[i] <= -cfg.grad_on:
            start = i
            last = i
            j = i + 1
            while j < n:
                if abs(grad[j]) >= cfg.grad_off:
                    last = j
                elif j - last >= gap:
                    break
                j += 1
            raw.append((start, last))
            i = j
        i += 1

    merged = []
    for s, e in raw:
        if merged and s - merged[-1][1] < gap:
            merged[-1][1] = e
        else:
            merged.append([s, e])

    out = []
    for s, e in merged:
        start_s = s / rate_hz
        end_s = (e + 1) / rate_hz
        if end_s - start_s >= cfg.min_duration:
            out.append((start_s, end_s))
    return out


def prf_by_counting(pred, true, positive):
    """Precision/recall/F1 (in percent) via an explicit confusion count."""
    tp = fp = fn = 0
    for p, t in zip(pred, true):
        p_pos = p in positive
        t_pos = t in positive
        if p_pos and t_pos:
            tp += 1
        elif p_pos:
            fp += 1
        elif t_pos:
            fn += 1
    precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return f1, precision, recall


def finite_difference_gradients(loss_fn, params, h=1e-5):
    """Central finite differences of a scalar loss over a dict of arrays."""
    grads = {}
    for name in sorted(params):
        arr = params[name]
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            gflat[i] = (lp - lm) / (2 * h)
        grads[name] = g
    return grads
