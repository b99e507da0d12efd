"""Seeded toy diffusion transformer with in-context reference tokens.

The joint sequence is ``[noisy ; reference ; prompt]``. Noisy and reference
tokens form the image stream and carry 2-D grid positions (axial RoPE);
prompt tokens are unrotated. Double-stream blocks keep separate weights for
the image and prompt streams and attend jointly; single-stream blocks run a
fused parallel attention + MLP over the whole sequence.

Pruning plugs in through a policy object (see :mod:`topi.pruning`); the
engine only calls ``is_anchor``, ``update`` and ``reduce`` on it.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .tensor import derive_seed, row_l2_norms, row_softmax, seeded_fill

ROPE_BASE = 10000.0
_WEIGHT_IDS = (
    "q_img", "k_img", "v_img", "o_img", "ff1_img", "ff2_img",
    "q_txt", "k_txt", "v_txt", "o_txt", "ff1_txt", "ff2_txt",
    "qkv", "up", "out",
)
SCHEMA_VERSION = 1
# Query/key init gain; sharpens attention so reference tokens are not all alike.
QK_GAIN = 1.5
# Soft RMS norm floor: tokens with RMS well below 1 are left nearly unscaled,
# so low-energy reference tokens keep small keys and values.
NORM_FLOOR = 1.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    depth_double: int = 6
    depth_single: int = 6
    heads: int = 8
    head_dim: int = 8
    ffn_mult: int = 4
    n_noisy: int = 64
    n_ref: int = 64
    n_prompt: int = 8
    T: int = 40
    seed: int = 42

    def __post_init__(self):
        for name in ("depth_double", "heads", "head_dim", "n_noisy", "n_ref", "n_prompt", "T"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.depth_single < 0:
            raise ConfigError("depth_single must be >= 0")
        if self.ffn_mult not in (4, 6):
            raise ConfigError("ffn_mult must be 4 (Flux-style) or 6 (Qwen-style)")
        if self.head_dim % 4:
            raise ConfigError("head_dim must be divisible by 4 for axial RoPE")

    @property
    def d(self) -> int:
        return self.heads * self.head_dim

    @property
    def n_layers(self) -> int:
        return self.depth_double + self.depth_single

    def block_kind(self, layer: int) -> str:
        return "double" if layer < self.depth_double else "single"

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def grid_positions(n: int, col_offset: int = 0) -> np.ndarray:
    """Row-major (row, col) positions for ``n`` tokens on a near-square grid."""
    width = math.isqrt(n - 1) + 1 if n > 0 else 1
    idx = np.arange(n)
    return np.stack([idx // width, idx % width + col_offset], axis=1).astype(np.int64)


def reference_positions(config: ModelConfig) -> np.ndarray:
    # Reference canvas sits to the right of the noisy canvas.
    noisy_width = math.isqrt(config.n_noisy - 1) + 1
    return grid_positions(config.n_ref, col_offset=noisy_width)


def _rope_tables(positions: np.ndarray, head_dim: int):
    quarter = head_dim // 4
    inv_freq = ROPE_BASE ** (-np.arange(quarter) * 2.0 / (head_dim // 2))
    ang_row = positions[:, :1] * inv_freq  # (n, quarter)
    ang_col = positions[:, 1:2] * inv_freq
    ang = np.concatenate([ang_row, ang_col], axis=1)  # (n, head_dim/2), one angle per pair
    return np.cos(ang), np.sin(ang)


def apply_rope(x, positions, head_dim: int | None = None) -> np.ndarray:
    """Axial 2-D rotary embedding applied per head.

    Within each head the first half of the channels is rotated in adjacent
    pairs by row-index angles and the second half by column-index angles.
    ``x`` is ``(n, heads * head_dim)``; ``head_dim`` defaults to the full width.
    """
    x = np.asarray(x, dtype=np.float64)
    positions = np.asarray(positions)
    n, width = x.shape
    head_dim = width if head_dim is None else head_dim
    if head_dim % 4 or width % head_dim:
        raise ConfigError("head_dim must be divisible by 4 and divide the row width")
    if positions.shape != (n, 2):
        raise ValueError(f"positions must have shape ({n}, 2), got {positions.shape}")
    cos, sin = _rope_tables(positions, head_dim)
    xp = x.reshape(n, width // head_dim, head_dim // 2, 2)
    a, b = xp[..., 0], xp[..., 1]
    cos = cos[:, None, :]
    sin = sin[:, None, :]
    out = np.empty_like(xp)
    out[..., 0] = a * cos - b * sin
    out[..., 1] = a * sin + b * cos
    return out.reshape(n, width)


def rms_norm(h: np.ndarray, floor: float = NORM_FLOOR) -> np.ndarray:
    return h / np.sqrt(np.mean(h * h, axis=1, keepdims=True) + floor)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x * x * x)))


def timestep_embedding(t: int, T: int, d: int) -> np.ndarray:
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    arg = (t / T) * 1000.0 * freqs
    emb = np.zeros(d)
    emb[:half] = np.cos(arg)
    emb[half : 2 * half] = np.sin(arg)
    return emb


@dataclass
class SequenceState:
    H_noisy: np.ndarray
    H_ref: np.ndarray
    H_prompt: np.ndarray
    P_noisy: np.ndarray
    P_ref: np.ndarray
    t: int
    ref_index: np.ndarray = None  # original reference index of each active row

    def __post_init__(self):
        if self.ref_index is None:
            self.ref_index = np.arange(self.H_ref.shape[0])
        if len(self.P_noisy) != self.H_noisy.shape[0] or len(self.P_ref) != self.H_ref.shape[0]:
            raise ValueError("position lists must match hidden-state row counts")

    @property
    def n_noisy(self) -> int:
        return self.H_noisy.shape[0]

    @property
    def n_ref(self) -> int:
        return self.H_ref.shape[0]

    def joint(self) -> np.ndarray:
        return concat_sequence(self.H_noisy, self.H_ref, self.H_prompt)


def concat_sequence(noisy, ref, prompt=None) -> np.ndarray:
    """Joint token order ``[G ; C ; prompt]``; reference token j sits at row |G| + j."""
    blocks = [np.asarray(noisy), np.asarray(ref)]
    if prompt is not None:
        blocks.append(np.asarray(prompt))
    d = blocks[0].shape[1]
    return np.concatenate([b.reshape(-1, d) for b in blocks], axis=0)


@dataclass
class AttentionCapture:
    layer: int
    attn: np.ndarray  # (heads, |G|, |C_active|), noisy-query -> reference-key slice
    value_norms: np.ndarray  # (heads, |C_active|)
    ref_hidden: np.ndarray  # pre-attention reference hidden states (|C_active|, d)
    ref_index: np.ndarray
    n_keys: int
    row_sums: np.ndarray | None = None  # (heads, |G|) sums of the full noisy-query rows


@dataclass
class DenoiseOutput:
    eps: np.ndarray
    captures: list = field(default_factory=list)
    state: SequenceState | None = None


class ToyDiT:
    """Weights are built once from ``config.seed`` and never mutated."""

    def __init__(self, config: ModelConfig, key_scale: dict | None = None, ref_key_scale: dict | None = None):
        """``key_scale`` multiplies a layer's whole key projection;
        ``ref_key_scale`` multiplies only the keys of reference tokens at that
        layer. Both are probes for analysis experiments."""
        self.config = config
        self.ref_key_scale = dict(ref_key_scale or {})
        d, c = config.d, config
        hidden = c.ffn_mult * d
        self.layers = []
        for layer in range(c.n_layers):
            w = {}

            def fill(name, rows, cols, gain=1.0, _layer=layer):
                seed = derive_seed(c.seed, _layer, _WEIGHT_IDS.index(name))
                return seeded_fill(rows, cols, seed, "gaussian", gain / math.sqrt(rows))

            if c.block_kind(layer) == "double":
                for stream in ("img", "txt"):
                    for p in ("q", "k", "v", "o"):
                        w[f"{p}_{stream}"] = fill(f"{p}_{stream}", d, d, QK_GAIN if p in "qk" else 1.0)
                    w[f"ff1_{stream}"] = fill(f"ff1_{stream}", d, hidden)
                    w[f"ff2_{stream}"] = fill(f"ff2_{stream}", hidden, d)
            else:
                w["qkv"] = fill("qkv", d, 3 * d)
                w["qkv"][:, : 2 * d] *= QK_GAIN
                w["up"] = fill("up", d, hidden)
                w["out"] = fill("out", d + hidden, d)
            self.layers.append(w)
        self.final = seeded_fill(d, d, derive_seed(c.seed, 10**6, 1), "gaussian", 1.0 / math.sqrt(d))
        if key_scale:
            for layer, s in key_scale.items():
                self._scale_keys(layer, s)
        for w in self.layers:
            for arr in w.values():
                arr.setflags(write=False)

    def _scale_keys(self, layer: int, s: float):
        w = self.layers[layer]
        d = self.config.d
        if "k_img" in w:
            w["k_img"] = w["k_img"] * s
        else:
            w["qkv"] = w["qkv"].copy()
            w["qkv"][:, d : 2 * d] *= s

    # -- forward ------------------------------------------------------------

    def forward_block(self, state: SequenceState, layer: int, capture: bool = False, counters: Counter | None = None):
        """Run one block; returns ``(new_state, capture_or_None)``."""
        c = self.config
        if not 0 <= layer < c.n_layers:
            raise IndexError(f"layer {layer} out of range")
        w = self.layers[layer]
        d, nh, hd = c.d, c.heads, c.head_dim
        n_g, n_c = state.n_noisy, state.n_ref
        n_img = n_g + n_c
        h_img = np.concatenate([state.H_noisy, state.H_ref], axis=0)
        h_txt = state.H_prompt
        pos_img = np.concatenate([state.P_noisy, state.P_ref], axis=0)

        if c.block_kind(layer) == "double":
            x_img, x_txt = rms_norm(h_img), rms_norm(h_txt)
            q = np.concatenate([x_img @ w["q_img"], x_txt @ w["q_txt"]])
            k = np.concatenate([x_img @ w["k_img"], x_txt @ w["k_txt"]])
            v = np.concatenate([x_img @ w["v_img"], x_txt @ w["v_txt"]])
        else:
            x = rms_norm(np.concatenate([h_img, h_txt]))
            qkv = x @ w["qkv"]
            q, k, v = qkv[:, :d], qkv[:, d : 2 * d], qkv[:, 2 * d :]
        q = np.concatenate([apply_rope(q[:n_img], pos_img, hd), q[n_img:]])
        if layer in self.ref_key_scale:
            k = k.copy()
            k[n_g:n_img] *= self.ref_key_scale[layer]
        k = np.concatenate([apply_rope(k[:n_img], pos_img, hd), k[n_img:]])

        n_tot = q.shape[0]
        qh = q.reshape(n_tot, nh, hd).transpose(1, 0, 2)
        kh = k.reshape(n_tot, nh, hd).transpose(1, 0, 2)
        vh = v.reshape(n_tot, nh, hd).transpose(1, 0, 2)
        logits = np.matmul(qh, kh.transpose(0, 2, 1)).reshape(nh * n_tot, n_tot)
        a = row_softmax(logits, 1.0 / math.sqrt(hd)).reshape(nh, n_tot, n_tot)
        o = np.matmul(a, vh).transpose(1, 0, 2).reshape(n_tot, d)
        cap = None
        if capture:
            vnorm = row_l2_norms(vh[:, n_g:n_img].reshape(nh * n_c, hd)).reshape(nh, n_c)
            cap = AttentionCapture(
                layer, a[:, :n_g, n_g:n_img].copy(), vnorm, state.H_ref.copy(), state.ref_index.copy(), n_tot,
                a[:, :n_g].sum(axis=2),
            )
            if counters is not None:
                counters["captured_layers"] += 1

        if c.block_kind(layer) == "double":
            h_img = h_img + o[:n_img] @ w["o_img"]
            h_txt = h_txt + o[n_img:] @ w["o_txt"]
            h_img = h_img + gelu(rms_norm(h_img) @ w["ff1_img"]) @ w["ff2_img"]
            h_txt = h_txt + gelu(rms_norm(h_txt) @ w["ff1_txt"]) @ w["ff2_txt"]
        else:
            mlp = gelu(x @ w["up"])
            h = np.concatenate([h_img, h_txt]) + np.concatenate([o, mlp], axis=1) @ w["out"]
            h_img, h_txt = h[:n_img], h[n_img:]
        new = replace(state, H_noisy=h_img[:n_g], H_ref=h_img[n_g:], H_prompt=h_txt)
        return new, cap

    def initial_state(self, noise, reference, prompt, t: int) -> SequenceState:
        c = self.config
        h_noisy = np.asarray(noise, dtype=np.float64) + timestep_embedding(t, c.T, c.d)
        return SequenceState(
            H_noisy=h_noisy,
            H_ref=np.asarray(reference, dtype=np.float64),
            H_prompt=np.asarray(prompt, dtype=np.float64),
            P_noisy=grid_positions(c.n_noisy),
            P_ref=reference_positions(c),
            t=t,
        )

    def default_prompt(self) -> np.ndarray:
        c = self.config
        return seeded_fill(c.n_prompt, c.d, derive_seed(c.seed, 10**6, 2), "gaussian")


@lru_cache(maxsize=32)
def build_model(config: ModelConfig) -> ToyDiT:
    return ToyDiT(config)


def make_reference(config: ModelConfig, seed: int) -> np.ndarray:
    """Synthetic reference latents: gaussian tokens modulated by a smooth blob so
    a minority of tokens carries most of the energy (object on background)."""
    base = seeded_fill(config.n_ref, config.d, derive_seed(seed, 7), "gaussian")
    pos = grid_positions(config.n_ref).astype(float)
    centre = seeded_fill(1, 2, derive_seed(seed, 8), "uniform", 0.5)[0] + 0.5
    extent = pos.max(axis=0) + 1.0
    r2 = np.sum(((pos + 0.5) / extent - centre) ** 2, axis=1)
    amplitude = 0.15 + 2.5 * np.exp(-r2 / 0.05)
    return base * amplitude[:, None]


def make_noise(config: ModelConfig, seed: int) -> np.ndarray:
    return seeded_fill(config.n_noisy, config.d, derive_seed(seed, 9), "gaussian")


def denoise_step(
    model: ToyDiT,
    state: SequenceState,
    capture_layers=(),
    reducer=None,
    reduce_at: int = 0,
    counters: Counter | None = None,
) -> DenoiseOutput:
    """Full forward pass at one timestep.

    ``reducer`` (a callable on ``SequenceState``) is applied to the stream
    just before layer ``reduce_at``; layers before it see the full reference.
    """
    if state.t < 1:
        raise ValueError("timestep must be >= 1")
    capture_layers = set(capture_layers)
    captures = []
    for layer in range(model.config.n_layers):
        if reducer is not None and layer == reduce_at:
            state = reducer(state)
        state, cap = model.forward_block(state, layer, layer in capture_layers, counters)
        if cap is not None:
            captures.append(cap)
    if reducer is not None and reduce_at >= model.config.n_layers:
        state = reducer(state)
    eps = rms_norm(state.H_noisy) @ model.final
    return DenoiseOutput(eps=eps, captures=captures, state=state)


@dataclass
class TrajectoryRecord:
    config: ModelConfig
    steps: list = field(default_factory=list)
    masks: dict = field(default_factory=dict)
    scores: dict = field(default_factory=dict)
    final: np.ndarray | None = None
    counters: Counter = field(default_factory=Counter)

    @property
    def mode_a_steps(self) -> list[int]:
        return [s["t"] for s in self.steps if s["mode"] == "A"]

    def to_json(self, include_final: bool = True) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "steps": self.steps,
            "masks": {str(t): v for t, v in self.masks.items()},
            "scores": {str(t): v for t, v in self.scores.items()},
            "counters": dict(sorted(self.counters.items())),
        }
        if include_final and self.final is not None:
            out["final"] = self.final.tolist()
        return out


def run_trajectory(
    model: ToyDiT,
    init_noise,
    reference,
    pruner=None,
    capture_layers=(),
    prompt=None,
    on_capture=None,
    capture_steps=None,
) -> TrajectoryRecord:
    """Denoise from t=T down to 1 with the rectified-flow Euler update
    ``G <- G - eps / T``.

    Without a pruner every step runs the full context. With one, anchor steps
    (Mode A) run the full context, capture the pruner's layers and refresh its
    mask; other steps (Mode B) gather the retained reference rows after the
    pruner's exempt front-end layers. ``capture_layers`` adds observation-only
    captures, summarised per step as the target-aware score of each layer;
    ``capture_steps`` restricts those to a set of timesteps.
    """
    c = model.config
    prompt = model.default_prompt() if prompt is None else prompt
    reference = np.asarray(reference, dtype=np.float64)
    g = np.asarray(init_noise, dtype=np.float64).copy()
    record = TrajectoryRecord(config=c)
    counters = record.counters
    all_extra = set(capture_layers)
    for t in range(c.T, 0, -1):
        extra = all_extra if capture_steps is None or t in capture_steps else set()
        state = model.initial_state(g, reference, prompt, t)
        step = {"t": t}
        if pruner is None:
            out = denoise_step(model, state, extra, counters=counters)
            step["mode"] = "full"
            step["scored"] = False
            step["retained"] = c.n_ref
        elif pruner.is_anchor(t):
            wanted = extra | set(pruner.layers)
            out = denoise_step(model, state, wanted, counters=counters)
            mask = pruner.update(t, [cp for cp in out.captures if cp.layer in pruner.layers], counters)
            record.masks[t] = [int(i) for i in np.flatnonzero(mask.keep)]
            if pruner.last_scores is not None:
                record.scores[t] = [float(x) for x in pruner.last_scores.values]
            step["mode"] = "A"
            step["scored"] = True
            step["retained"] = c.n_ref
            step["next_retained"] = mask.k_sel
        else:
            out = denoise_step(
                model,
                state,
                extra,
                reducer=lambda s: pruner.reduce(s, counters),
                reduce_at=pruner.k_exempt,
                counters=counters,
            )
            step["mode"] = "B"
            step["scored"] = False
            step["retained"] = pruner.mask.k_sel
        if extra:
            step["ref_attention"] = {
                str(cp.layer): {
                    "ref_index": [int(i) for i in cp.ref_index],
                    "score": [float(x) for x in cp.attn.sum(axis=(0, 1)) / (cp.attn.shape[0] * cp.attn.shape[1])],
                }
                for cp in out.captures
                if cp.layer in extra
            }
        if on_capture is not None:
            for cp in out.captures:
                if cp.layer in extra:
                    on_capture(t, cp)
        counters["steps"] += 1
        record.steps.append(step)
        g = g - out.eps / c.T
    record.final = g
    return record
