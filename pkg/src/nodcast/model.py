"""Two-channel causal transformer predicting nods, backchannels, VAD, VAP.

Per-channel embeddings pass through a shared stack of causal self-attention
blocks, then a shared stack of causal cross-attention blocks in which each
channel attends to the other. Task heads read the layer-normed
concatenation of both channel states (stereo) or the single self-attended
state (monaural, an ablation that sees only the speaker channel and skips
cross-attention entirely).

Heads per frame: nod class distribution (C = 2 timing / 4 type task),
backchannel probability (multi-task variant only), per-channel voice
activity, and a 256-state distribution over both channels' quantized
voice activity across the next two seconds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from nodcast import CHECKPOINT_VERSION
from nodcast.errors import EmptyInputError, HorizonError, InvalidConfigError, ShapeError
from nodcast.frontend import FrameEmbedding
from nodcast import nn

MLP_RATIO = 2


@dataclass(frozen=True)
class ModelConfig:
    frame_rate: int = 10
    window_seconds: float = 10.0
    dim: int = 64
    self_layers: int = 1
    cross_layers: int = 3
    heads: int = 4
    nod_classes: int = 4
    monaural: bool = False
    multitask_bc: bool = True
    vap_bins: tuple[int, ...] = (200, 400, 600, 800)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "vap_bins", tuple(self.vap_bins))
        if self.nod_classes not in (2, 4):
            raise InvalidConfigError("nod_classes must be 2 or 4")
        if sum(self.vap_bins) != 2000:
            raise InvalidConfigError("vap_bins must cover exactly 2000 ms")
        if self.dim % self.heads != 0:
            raise InvalidConfigError("dim must be divisible by heads")
        if self.frame_rate not in (10, 50):
            raise InvalidConfigError("frame_rate must be 10 or 50")
        if self.window_seconds <= 0:
            raise InvalidConfigError("window_seconds must be positive")
        for width in self.vap_bins:
            if (width * self.frame_rate) % 1000 != 0:
                raise InvalidConfigError(f"bin width {width} ms not frame-aligned")

    @property
    def vap_states(self) -> int:
        return 1 << (2 * len(self.vap_bins))

    @property
    def head_in_dim(self) -> int:
        return self.dim if self.monaural else 2 * self.dim


@dataclass(frozen=True)
class VapState:
    """Joint future-activity class: 2 channels x 4 bins packed into 8 bits
    (channel-major, earliest bin least significant)."""

    index: int

    def __post_init__(self):
        if not 0 <= self.index < 256:
            raise InvalidConfigError("VapState index must be in [0, 256)")

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "VapState":
        bits = np.asarray(bits, dtype=int).reshape(2, -1)
        index = 0
        for c in range(2):
            for b in range(bits.shape[1]):
                index |= int(bits[c, b]) << (c * bits.shape[1] + b)
        return cls(index)

    def to_bits(self, n_bins: int = 4) -> np.ndarray:
        return np.array([[(self.index >> (c * n_bins + b)) & 1
                          for b in range(n_bins)] for c in range(2)])


def vap_state_encode(future_vad: np.ndarray, bins: tuple[int, ...],
                     frame_rate: int) -> VapState:
    """Quantize the next 2 s of both channels' activity into one state.

    ``future_vad`` is (2, frame_rate * 2) boolean activity sampled at the
    model frame rate; a bin counts as active when its mean activity is at
    least 0.5.
    """
    future_vad = np.asarray(future_vad)
    need = 2 * frame_rate
    if future_vad.shape != (2, need):
        raise HorizonError(f"need (2, {need}) future activity, got {future_vad.shape}")
    widths = [w * frame_rate // 1000 for w in bins]
    bits = np.zeros((2, len(bins)), dtype=int)
    for c in range(2):
        pos = 0
        for b, w in enumerate(widths):
            bits[c, b] = int(future_vad[c, pos:pos + w].mean() >= 0.5)
            pos += w
    return VapState.from_bits(bits)


def vap_frame_targets(vad: np.ndarray, bins: tuple[int, ...],
                      frame_rate: int) -> np.ndarray:
    """Per-frame VAP class targets; -1 where the 2 s horizon runs out."""
    vad = np.asarray(vad, dtype=bool)
    two_s = 2 * frame_rate
    n = vad.shape[1]
    targets = np.full(n, -1, dtype=np.int64)
    for t in range(n - two_s):
        targets[t] = vap_state_encode(vad[:, t + 1:t + 1 + two_s], bins, frame_rate).index
    return targets


@dataclass(frozen=True)
class PredictionFrame:
    """Model outputs for one frame."""

    p_nod: np.ndarray
    p_bc: float | None
    p_vad: np.ndarray
    p_vap: np.ndarray


class ModelOutputs:
    """Per-frame probabilities; indexes like a sequence of PredictionFrame."""

    def __init__(self, p_nod, p_bc, p_vad, p_vap):
        self.p_nod = p_nod
        self.p_bc = p_bc
        self.p_vad = p_vad
        self.p_vap = p_vap

    def __len__(self):
        return self.p_nod.shape[0]

    def __getitem__(self, i) -> PredictionFrame:
        return PredictionFrame(
            self.p_nod[i],
            None if self.p_bc is None else float(self.p_bc[i]),
            self.p_vad[i],
            self.p_vap[i],
        )


def predict_latest_frame(outputs: ModelOutputs) -> PredictionFrame:
    """The streaming output: predictions for the newest frame."""
    if len(outputs) == 0:
        raise EmptyInputError("no prediction frames")
    return outputs[-1]


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD0D]))
    hidden = MLP_RATIO * cfg.dim
    params: dict[str, np.ndarray] = {}
    nn.init_linear(params, "in_proj", cfg.dim, cfg.dim, rng)
    for i in range(cfg.self_layers):
        nn.init_self_block(params, f"self.{i}", cfg.dim, hidden, rng)
    if not cfg.monaural:
        for i in range(cfg.cross_layers):
            nn.init_cross_block(params, f"cross.{i}", cfg.dim, hidden, rng)
    nn.init_layernorm(params, "final_ln", cfg.dim)
    nn.init_linear(params, "head.nod", cfg.head_in_dim, cfg.nod_classes, rng)
    nn.init_linear(params, "head.vad", cfg.head_in_dim, 2, rng)
    nn.init_linear(params, "head.vap", cfg.head_in_dim, cfg.vap_states, rng)
    if cfg.multitask_bc:
        nn.init_linear(params, "head.bc", cfg.head_in_dim, 1, rng)
    return params


class NodPredictor:
    """Owns a config and a flat parameter dict; weights are float64."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg)

    def _stack_forward(self, user, system, with_cache):
        cfg = self.cfg
        cache = {"blocks": []} if with_cache else None
        u, u_in = nn.linear_fwd(user, self.params, "in_proj")
        if with_cache:
            cache["in_proj_u"] = u_in
        streams = [u]
        if not cfg.monaural:
            s, s_in = nn.linear_fwd(system, self.params, "in_proj")
            if with_cache:
                cache["in_proj_s"] = s_in
            streams.append(s)

        for i in range(cfg.self_layers):
            new_streams = []
            caches = []
            for x in streams:
                y, c = nn.self_block_fwd(x, self.params, f"self.{i}", cfg.heads)
                new_streams.append(y)
                caches.append(c)
            streams = new_streams
            if with_cache:
                cache["blocks"].append(("self", i, caches))

        if not cfg.monaural:
            for i in range(cfg.cross_layers):
                u, s = streams
                u2, cu = nn.cross_block_fwd(u, s, self.params, f"cross.{i}", cfg.heads)
                s2, cs = nn.cross_block_fwd(s, u, self.params, f"cross.{i}", cfg.heads)
                streams = [u2, s2]
                if with_cache:
                    cache["blocks"].append(("cross", i, [cu, cs]))

        normed = []
        ln_caches = []
        for x in streams:
            y, c = nn.layernorm_fwd(x, self.params, "final_ln")
            normed.append(y)
            ln_caches.append(c)
        state = normed[0] if cfg.monaural else np.concatenate(normed, axis=1)
        if with_cache:
            cache["final_ln"] = ln_caches
            cache["state"] = state
        return state, cache

    def forward_logits(self, user, system=None, with_cache=False):
        """Raw head logits per frame; used by training and by forward()."""
        cfg = self.cfg
        user = user.data if isinstance(user, FrameEmbedding) else np.asarray(user)
        if system is not None:
            system = system.data if isinstance(system, FrameEmbedding) else np.asarray(system)
        if user.ndim != 2 or user.shape[1] != cfg.dim:
            raise ShapeError(f"user embedding must be (frames, {cfg.dim})")
        if not cfg.monaural:
            if system is None or system.shape != user.shape:
                raise ShapeError("stereo model needs matching user/system embeddings")
        if user.shape[0] == 0:
            logits = {"nod": np.zeros((0, cfg.nod_classes)),
                      "vad": np.zeros((0, 2)),
                      "vap": np.zeros((0, cfg.vap_states))}
            if cfg.multitask_bc:
                logits["bc"] = np.zeros(0)
            return logits, None

        state, cache = self._stack_forward(user, system, with_cache)
        logits = {}
        logits["nod"], _ = nn.linear_fwd(state, self.params, "head.nod")
        logits["vad"], _ = nn.linear_fwd(state, self.params, "head.vad")
        logits["vap"], _ = nn.linear_fwd(state, self.params, "head.vap")
        if cfg.multitask_bc:
            bc, _ = nn.linear_fwd(state, self.params, "head.bc")
            logits["bc"] = bc[:, 0]
        return logits, cache

    def forward(self, user, system=None) -> ModelOutputs:
        """One ModelOutputs frame per input frame, causally masked."""
        logits, _ = self.forward_logits(user, system, with_cache=False)
        return ModelOutputs(
            p_nod=nn.softmax(logits["nod"], axis=-1),
            p_bc=None if "bc" not in logits else nn.sigmoid(logits["bc"]),
            p_vad=nn.sigmoid(logits["vad"]),
            p_vap=nn.softmax(logits["vap"], axis=-1),
        )

    def backward(self, cache, dlogits: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Backprop logit gradients to every trainable weight."""
        cfg = self.cfg
        grads: dict[str, np.ndarray] = {}
        state = cache["state"]
        dstate = nn.linear_bwd(dlogits["nod"], state, self.params, grads, "head.nod")
        dstate += nn.linear_bwd(dlogits["vad"], state, self.params, grads, "head.vad")
        dstate += nn.linear_bwd(dlogits["vap"], state, self.params, grads, "head.vap")
        if cfg.multitask_bc and "bc" in dlogits:
            dstate += nn.linear_bwd(dlogits["bc"][:, None], state, self.params,
                                    grads, "head.bc")

        if cfg.monaural:
            dstreams = [nn.layernorm_bwd(dstate, cache["final_ln"][0],
                                         self.params, grads, "final_ln")]
        else:
            du, ds = np.split(dstate, 2, axis=1)
            dstreams = [
                nn.layernorm_bwd(du, cache["final_ln"][0], self.params, grads, "final_ln"),
                nn.layernorm_bwd(ds, cache["final_ln"][1], self.params, grads, "final_ln"),
            ]

        for kind, i, caches in reversed(cache["blocks"]):
            if kind == "cross":
                du, ds = dstreams
                du_x, ds_ctx = nn.cross_block_bwd(du, caches[0], self.params, grads,
                                                  f"cross.{i}", cfg.heads)
                ds_x, du_ctx = nn.cross_block_bwd(ds, caches[1], self.params, grads,
                                                  f"cross.{i}", cfg.heads)
                dstreams = [du_x + du_ctx, ds_x + ds_ctx]
            else:
                dstreams = [
                    nn.self_block_bwd(d, c, self.params, grads, f"self.{i}", cfg.heads)
                    for d, c in zip(dstreams, caches)
                ]

        d_in = nn.linear_bwd(dstreams[0], cache["in_proj_u"], self.params, grads, "in_proj")
        if not cfg.monaural:
            nn.linear_bwd(dstreams[1], cache["in_proj_s"], self.params, grads, "in_proj")
        # Missing keys (e.g. bc head during single-task loss) get zero grads.
        for key, value in self.params.items():
            if key not in grads:
                grads[key] = np.zeros_like(value)
        return grads


# --- checkpoints ---------------------------------------------------------

def save_model(model: NodPredictor, path) -> None:
    """Single-file checkpoint: JSON header + named float64 arrays."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": {**model.cfg.__dict__, "vap_bins": list(model.cfg.vap_bins)},
    }
    arrays = {f"param:{k}": v for k, v in model.params.items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_model(path) -> NodPredictor:
    with np.load(path) as archive:
        meta = json.loads(archive["__meta__"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise InvalidConfigError(
                f"checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
        cfg_dict = dict(meta["config"])
        cfg_dict["vap_bins"] = tuple(cfg_dict["vap_bins"])
        cfg = ModelConfig(**cfg_dict)
        params = {k[len("param:"):]: archive[k] for k in archive.files
                  if k.startswith("param:")}
    return NodPredictor(cfg, params)
