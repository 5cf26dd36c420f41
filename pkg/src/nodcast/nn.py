"""Minimal float64 neural-net primitives with hand-written backward passes.

Everything is functional: parameters live in flat dicts of arrays keyed by
dotted names, forward functions return (output, cache), and backward
functions consume the cache while accumulating weight gradients into a
dict under the same keys. Analytic gradients are verified against central
finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_LN_EPS = 1e-5
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * phi


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def accumulate(grads, key, value):
    if key in grads:
        grads[key] += value
    else:
        grads[key] = value


# --- linear ------------------------------------------------------------

def linear_fwd(x, params, prefix):
    return x @ params[prefix + ".w"] + params[prefix + ".b"], x


def linear_bwd(dy, x, params, grads, prefix):
    accumulate(grads, prefix + ".w", x.T @ dy)
    accumulate(grads, prefix + ".b", dy.sum(axis=0))
    return dy @ params[prefix + ".w"].T


def init_linear(params, prefix, d_in, d_out, rng, scale=None):
    if scale is None:
        scale = np.sqrt(2.0 / (d_in + d_out))
    params[prefix + ".w"] = rng.normal(0.0, scale, (d_in, d_out))
    params[prefix + ".b"] = np.zeros(d_out)


# --- layer norm --------------------------------------------------------

def layernorm_fwd(x, params, prefix):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xn = xc * inv
    return xn * params[prefix + ".g"] + params[prefix + ".b"], (xn, inv)


def layernorm_bwd(dy, cache, params, grads, prefix):
    xn, inv = cache
    accumulate(grads, prefix + ".g", (dy * xn).sum(axis=0))
    accumulate(grads, prefix + ".b", dy.sum(axis=0))
    dxn = dy * params[prefix + ".g"]
    return inv * (dxn
                  - dxn.mean(axis=-1, keepdims=True)
                  - xn * (dxn * xn).mean(axis=-1, keepdims=True))


def init_layernorm(params, prefix, dim):
    params[prefix + ".g"] = np.ones(dim)
    params[prefix + ".b"] = np.zeros(dim)


# --- causal multi-head attention ----------------------------------

def _alibi_bias(t, n_heads):
    """Per-head linear distance penalties; gives attention a clock without
    adding parameters (constant w.r.t. the weights, so no backward term)."""
    dist = np.arange(t)[:, None] - np.arange(t)[None, :]
    slopes = 2.0 ** (-8.0 * (np.arange(n_heads) + 1) / n_heads)
    return -slopes[:, None, None] * dist[None, :, :]


def attention_fwd(xq, xkv, params, prefix, n_heads):
    """Causal MHA; query frame t attends key frames <= t (queries and keys
    share the frame axis, also in the cross-channel case)."""
    t, d = xq.shape
    dh = d // n_heads

    q, _ = linear_fwd(xq, params, prefix + ".q")
    k, _ = linear_fwd(xkv, params, prefix + ".k")
    v, _ = linear_fwd(xkv, params, prefix + ".v")
    qh = q.reshape(t, n_heads, dh).transpose(1, 0, 2)
    kh = k.reshape(t, n_heads, dh).transpose(1, 0, 2)
    vh = v.reshape(t, n_heads, dh).transpose(1, 0, 2)

    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh) + _alibi_bias(t, n_heads)
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    scores[:, mask] = -np.inf
    attn = softmax(scores, axis=-1)

    ctx = (attn @ vh).transpose(1, 0, 2).reshape(t, d)
    y, _ = linear_fwd(ctx, params, prefix + ".o")
    return y, (xq, xkv, qh, kh, vh, attn, ctx)


def attention_bwd(dy, cache, params, grads, prefix, n_heads):
    xq, xkv, qh, kh, vh, attn, ctx = cache
    t, d = xq.shape
    dh = d // n_heads

    dctx = linear_bwd(dy, ctx, params, grads, prefix + ".o")
    dctx = dctx.reshape(t, n_heads, dh).transpose(1, 0, 2)

    dattn = dctx @ vh.transpose(0, 2, 1)
    dvh = attn.transpose(0, 2, 1) @ dctx
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dscores /= np.sqrt(dh)
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 2, 1) @ qh

    dq = dqh.transpose(1, 0, 2).reshape(t, d)
    dk = dkh.transpose(1, 0, 2).reshape(t, d)
    dv = dvh.transpose(1, 0, 2).reshape(t, d)
    dxq = linear_bwd(dq, xq, params, grads, prefix + ".q")
    dxkv = linear_bwd(dk, xkv, params, grads, prefix + ".k")
    dxkv += linear_bwd(dv, xkv, params, grads, prefix + ".v")
    return dxq, dxkv


def init_attention(params, prefix, dim, rng):
    for n in ("q", "k", "v", "o"):
        init_linear(params, f"{prefix}.{n}", dim, dim, rng, scale=1.0 / np.sqrt(dim))


# --- MLP ---------------------------------------------------------------

def mlp_fwd(x, params, prefix):
    h_pre, _ = linear_fwd(x, params, prefix + ".l1")
    h = gelu(h_pre)
    y, _ = linear_fwd(h, params, prefix + ".l2")
    return y, (x, h_pre, h)


def mlp_bwd(dy, cache, params, grads, prefix):
    x, h_pre, h = cache
    dh = linear_bwd(dy, h, params, grads, prefix + ".l2")
    dh_pre = dh * gelu_grad(h_pre)
    return linear_bwd(dh_pre, x, params, grads, prefix + ".l1")


def init_mlp(params, prefix, dim, hidden, rng):
    init_linear(params, prefix + ".l1", dim, hidden, rng)
    init_linear(params, prefix + ".l2", hidden, dim, rng)


# --- transformer blocks -----------------------------------------------

def self_block_fwd(x, params, prefix, n_heads):
    h1, c_ln1 = layernorm_fwd(x, params, prefix + ".ln1")
    a, c_att = attention_fwd(h1, h1, params, prefix + ".attn", n_heads)
    x2 = x + a
    h2, c_ln2 = layernorm_fwd(x2, params, prefix + ".ln2")
    m, c_mlp = mlp_fwd(h2, params, prefix + ".mlp")
    return x2 + m, (c_ln1, c_att, c_ln2, c_mlp)


def self_block_bwd(dy, cache, params, grads, prefix, n_heads):
    c_ln1, c_att, c_ln2, c_mlp = cache
    dm = mlp_bwd(dy, c_mlp, params, grads, prefix + ".mlp")
    dx2 = dy + layernorm_bwd(dm, c_ln2, params, grads, prefix + ".ln2")
    dq, dkv = attention_bwd(dx2, c_att, params, grads, prefix + ".attn", n_heads)
    return dx2 + layernorm_bwd(dq + dkv, c_ln1, params, grads, prefix + ".ln1")


def cross_block_fwd(x, ctx, params, prefix, n_heads):
    hq, c_lnq = layernorm_fwd(x, params, prefix + ".lnq")
    hk, c_lnk = layernorm_fwd(ctx, params, prefix + ".lnkv")
    a, c_att = attention_fwd(hq, hk, params, prefix + ".attn", n_heads)
    x2 = x + a
    h2, c_ln2 = layernorm_fwd(x2, params, prefix + ".ln2")
    m, c_mlp = mlp_fwd(h2, params, prefix + ".mlp")
    return x2 + m, (c_lnq, c_lnk, c_att, c_ln2, c_mlp)


def cross_block_bwd(dy, cache, params, grads, prefix, n_heads):
    c_lnq, c_lnk, c_att, c_ln2, c_mlp = cache
    dm = mlp_bwd(dy, c_mlp, params, grads, prefix + ".mlp")
    dx2 = dy + layernorm_bwd(dm, c_ln2, params, grads, prefix + ".ln2")
    dq, dkv = attention_bwd(dx2, c_att, params, grads, prefix + ".attn", n_heads)
    dx = dx2 + layernorm_bwd(dq, c_lnq, params, grads, prefix + ".lnq")
    dctx = layernorm_bwd(dkv, c_lnk, params, grads, prefix + ".lnkv")
    return dx, dctx


def init_self_block(params, prefix, dim, hidden, rng):
    init_layernorm(params, prefix + ".ln1", dim)
    init_layernorm(params, prefix + ".ln2", dim)
    init_attention(params, prefix + ".attn", dim, rng)
    init_mlp(params, prefix + ".mlp", dim, hidden, rng)


def init_cross_block(params, prefix, dim, hidden, rng):
    init_layernorm(params, prefix + ".lnq", dim)
    init_layernorm(params, prefix + ".lnkv", dim)
    init_layernorm(params, prefix + ".ln2", dim)
    init_attention(params, prefix + ".attn", dim, rng)
    init_mlp(params, prefix + ".mlp", dim, hidden, rng)


# --- gradient utilities ------------------------------------------------

def grad_global_norm(grads):
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_grads(grads, max_norm):
    """In-place global-norm clipping; returns the pre-clip norm."""
    norm = grad_global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm
