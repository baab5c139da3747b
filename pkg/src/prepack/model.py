"""A small decoder-only transformer with rotary positions and a KV cache.

The model exists to check prepacking against ordinary padded prefill, so it
favours a fixed, reproducible computation over speed or quality: pre-norm
blocks, RMS normalisation, rotary attention, a GELU feed-forward of width
``4 * d_model``, float32 everywhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from prepack.errors import InvalidConfig, InvalidPrompt, PlanMismatch, ShapeMismatch
from prepack.layout import AttentionLayout, build_layout, build_unpack_index
from prepack.packing import PackingPlan, PromptRecord, Segment

DTYPE = np.float32
# Additive bias for disallowed attention entries. Finite on purpose: pad rows
# are fully masked and must softmax to something finite, never NaN.
MASK_BIAS = DTYPE(-1e9)
ROPE_BASE = 10000.0
FFN_MULT = 4
NORM_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("vocab_size", "d_model", "n_heads", "n_layers"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise InvalidConfig(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.head_dim % 2:
            raise InvalidConfig(f"rotary encoding needs an even head_dim, got {self.head_dim}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class LayerWeights:
    attn_norm: np.ndarray  # (d,)
    w_q: np.ndarray  # (d, d)
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ffn_norm: np.ndarray  # (d,)
    w_up: np.ndarray  # (d, 4d)
    w_down: np.ndarray  # (4d, d)

    FIELDS = ("attn_norm", "w_q", "w_k", "w_v", "w_o", "ffn_norm", "w_up", "w_down")

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f) for f in self.FIELDS]


@dataclass
class Weights:
    config: ModelConfig
    embed: np.ndarray  # (vocab, d)
    layers: list[LayerWeights]
    final_norm: np.ndarray  # (d,)
    lm_head: np.ndarray  # (d, vocab)

    def arrays(self) -> list[np.ndarray]:
        out = [self.embed]
        for layer in self.layers:
            out.extend(layer.arrays())
        out += [self.final_norm, self.lm_head]
        return out


def _shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = config.d_model, FFN_MULT * config.d_model
    return {
        "attn_norm": (d,),
        "w_q": (d, d),
        "w_k": (d, d),
        "w_v": (d, d),
        "w_o": (d, d),
        "ffn_norm": (d,),
        "w_up": (d, f),
        "w_down": (f, d),
    }


def init_model(config: ModelConfig) -> Weights:
    """Random weights fully determined by ``config.rng_seed``."""
    rng = np.random.default_rng(config.rng_seed)

    def dense(shape: tuple[int, ...]) -> np.ndarray:
        return (rng.standard_normal(shape) / np.sqrt(shape[0])).astype(DTYPE)

    def gain(shape: tuple[int, ...]) -> np.ndarray:
        return (1.0 + 0.1 * rng.standard_normal(shape)).astype(DTYPE)

    embed = rng.standard_normal((config.vocab_size, config.d_model)).astype(DTYPE)
    layers = []
    for _ in range(config.n_layers):
        arrays = {
            name: gain(shape) if name.endswith("norm") else dense(shape)
            for name, shape in _shapes(config).items()
        }
        layers.append(LayerWeights(**arrays))
    final_norm = gain((config.d_model,))
    lm_head = dense((config.d_model, config.vocab_size))
    return Weights(config, embed, layers, final_norm, lm_head)


# Flat binary format: five little-endian int32 config fields, then every
# array in ``Weights.arrays()`` order as row-major little-endian float32.
_HEADER = struct.Struct("<5i")


def save_weights(weights: Weights, path: str | Path) -> None:
    c = weights.config
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(c.vocab_size, c.d_model, c.n_heads, c.n_layers, c.rng_seed))
        for arr in weights.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_weights(path: str | Path) -> Weights:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    vocab, d, heads, n_layers, seed = _HEADER.unpack_from(data)
    config = ModelConfig(vocab, d, heads, n_layers, seed)
    offset = _HEADER.size

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        n = int(np.prod(shape))
        if offset + 4 * n > len(data):
            raise ValueError(f"{path}: truncated payload")
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        return arr.astype(DTYPE)

    embed = take((vocab, d))
    layers = [LayerWeights(**{k: take(s) for k, s in _shapes(config).items()}) for _ in range(n_layers)]
    final_norm = take((d,))
    lm_head = take((d, vocab))
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return Weights(config, embed, layers, final_norm, lm_head)


# ---------------------------------------------------------------------------
# building blocks


def _rms_norm(x: np.ndarray, gain: np.ndarray) -> np.ndarray:
    ms = np.mean(x * x, axis=-1, keepdims=True)
    return x / np.sqrt(ms + DTYPE(NORM_EPS)) * gain


def _gelu(x: np.ndarray) -> np.ndarray:
    c = DTYPE(np.sqrt(2.0 / np.pi))
    return DTYPE(0.5) * x * (DTYPE(1.0) + np.tanh(c * (x + DTYPE(0.044715) * x * x * x)))


def _rope_tables(positions: np.ndarray, head_dim: int) -> tuple[np.ndarray, np.ndarray]:
    half = head_dim // 2
    inv_freq = ROPE_BASE ** (-np.arange(half, dtype=np.float64) / half)
    angles = positions[..., None].astype(np.float64) * inv_freq
    return np.cos(angles).astype(DTYPE), np.sin(angles).astype(DTYPE)


def _apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate ``x[..., heads, head_dim]``; tables broadcast over the head axis."""
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    cos, sin = cos[..., None, :], sin[..., None, :]
    return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)


def _softmax_(scores: np.ndarray) -> np.ndarray:
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


def attention_scores(x: np.ndarray, w_q: np.ndarray, w_k: np.ndarray, n_heads: int = 1) -> np.ndarray:
    """Scaled dot-product scores ``(x w_q)(x w_k)^T / sqrt(head_dim)`` per head.

    Returns an ``(n_heads, n, n)`` array. No mask and no positional rotation.
    """
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or w_q.shape[0] != x.shape[1] or w_k.shape != w_q.shape:
        raise ShapeMismatch(f"x {x.shape}, w_q {w_q.shape}, w_k {w_k.shape}")
    if w_q.shape[1] % n_heads:
        raise ShapeMismatch(f"projection width {w_q.shape[1]} not divisible by {n_heads} heads")
    n, hd = x.shape[0], w_q.shape[1] // n_heads
    q = (x @ w_q).reshape(n, n_heads, hd).transpose(1, 0, 2)
    k = (x @ w_k).reshape(n, n_heads, hd).transpose(1, 2, 0)
    return (q @ k) * DTYPE(1.0 / np.sqrt(hd))


class AttentionCounter:
    """Tallies attention-score entries evaluated by forward passes."""

    def __init__(self) -> None:
        self.entries = 0

    def add(self, n: int) -> None:
        self.entries += int(n)


@dataclass
class ForwardOutput:
    hidden: np.ndarray  # (B, T, d) after the final norm
    keys: list[np.ndarray]  # per layer (B, T, H, hd), rotated
    values: list[np.ndarray]  # per layer (B, T, H, hd)


def forward(
    weights: Weights,
    tokens: np.ndarray,
    positions: np.ndarray,
    mask: np.ndarray,
    counter: AttentionCounter | None = None,
) -> ForwardOutput:
    """Run every layer over a ``(B, T)`` batch under an explicit ``(B, T, T)`` mask."""
    cfg = weights.config
    B, T = tokens.shape
    H, hd = cfg.n_heads, cfg.head_dim
    if positions.shape != (B, T) or mask.shape != (B, T, T):
        raise ShapeMismatch(f"tokens {tokens.shape}, positions {positions.shape}, mask {mask.shape}")

    x = weights.embed[tokens]
    bias = np.where(mask, DTYPE(0.0), MASK_BIAS)[:, None, :, :]
    cos, sin = _rope_tables(positions, hd)
    scale = DTYPE(1.0 / np.sqrt(hd))
    keys, values = [], []
    for layer in weights.layers:
        h = _rms_norm(x, layer.attn_norm)
        q = _apply_rope((h @ layer.w_q).reshape(B, T, H, hd), cos, sin)
        k = _apply_rope((h @ layer.w_k).reshape(B, T, H, hd), cos, sin)
        v = (h @ layer.w_v).reshape(B, T, H, hd)
        keys.append(k)
        values.append(v)

        qh, kh, vh = q.transpose(0, 2, 1, 3), k.transpose(0, 2, 3, 1), v.transpose(0, 2, 1, 3)
        attn = np.empty((B, H, T, hd), dtype=DTYPE)
        # One row at a time keeps the (H, T, T) score block cache-resident.
        for b in range(B):
            scores = qh[b] @ kh[b]
            if counter is not None:
                counter.add(scores.size)
            scores *= scale
            scores += bias[b]
            attn[b] = _softmax_(scores) @ vh[b]
        x = x + attn.transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model) @ layer.w_o

        h = _rms_norm(x, layer.ffn_norm)
        x = x + _gelu(h @ layer.w_up) @ layer.w_down
    return ForwardOutput(_rms_norm(x, weights.final_norm), keys, values)


# ---------------------------------------------------------------------------
# caches and prefill


@dataclass
class PromptCache:
    keys: list[np.ndarray]  # per layer (n, H, hd)
    values: list[np.ndarray]
    next_position: int

    @property
    def length(self) -> int:
        return self.keys[0].shape[0]


@dataclass
class KVCacheSet:
    """Per-prompt caches in original prompt order."""

    prompts: list[PromptCache] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.prompts)

    def __getitem__(self, i: int) -> PromptCache:
        return self.prompts[i]

    def __iter__(self):
        return iter(self.prompts)


@dataclass
class PrefillResult:
    caches: KVCacheSet
    logits: np.ndarray  # (k, vocab), at each prompt's last token

    def first_tokens(self) -> np.ndarray:
        return np.argmax(self.logits, axis=-1)


@dataclass
class PackedBatch:
    """Tensors handed to :func:`forward` for one prefill call."""

    tokens: np.ndarray
    positions: np.ndarray
    mask: np.ndarray
    plan: PackingPlan


def _check_tokens(weights: Weights, prompts: Sequence[PromptRecord]) -> None:
    if not prompts:
        raise InvalidPrompt("no prompts to prefill")
    vocab = weights.config.vocab_size
    for i, p in enumerate(prompts):
        lo, hi = min(p.tokens), max(p.tokens)
        if lo < 0 or hi >= vocab:
            raise InvalidPrompt(f"prompt {i} has token outside [0, {vocab})")


def identity_plan(lengths: Sequence[int]) -> PackingPlan:
    """One prompt per row, padded to the longest: the full-batching layout."""
    bins = tuple((Segment(i, 0, int(n)),) for i, n in enumerate(lengths))
    return PackingPlan(max(lengths), bins, len(bins))


def tensorize(
    prompts: Sequence[PromptRecord], plan: PackingPlan, layout: AttentionLayout | None = None
) -> PackedBatch:
    """Lay prompts out per ``plan`` into an ``(r, capacity)`` token tensor, pads = 0."""
    if plan.k != len(prompts):
        raise PlanMismatch(f"plan covers {plan.k} prompts, got {len(prompts)}")
    if layout is None:
        layout = build_layout(plan)
    tokens = np.zeros((plan.r, plan.capacity), dtype=np.int64)
    for b, segs in enumerate(plan.bins):
        for s in segs:
            p = prompts[s.prompt_original_index]
            if p.length != s.length:
                raise PlanMismatch(
                    f"prompt {s.prompt_original_index} has length {p.length}, plan says {s.length}"
                )
            tokens[b, s.start : s.end] = p.tokens
    return PackedBatch(tokens, layout.positions, layout.mask, plan)


def unpack(weights: Weights, out: ForwardOutput, plan: PackingPlan) -> PrefillResult:
    """Slice per-prompt caches and last-token logits out of a packed forward pass."""
    index = build_unpack_index(plan)
    prompts = []
    last_hidden = np.empty((plan.k, weights.config.d_model), dtype=DTYPE)
    for i, (b, start, n) in enumerate(index):
        sl = slice(start, start + n)
        prompts.append(
            PromptCache(
                keys=[k[b, sl].copy() for k in out.keys],
                values=[v[b, sl].copy() for v in out.values],
                next_position=n,
            )
        )
        last_hidden[i] = out.hidden[b, start + n - 1]
    return PrefillResult(KVCacheSet(prompts), last_hidden @ weights.lm_head)


def prefill_prepacked(
    weights: Weights,
    prompts: Sequence[PromptRecord],
    plan: PackingPlan,
    layout: AttentionLayout | None = None,
    counter: AttentionCounter | None = None,
) -> PrefillResult:
    """One forward pass over the packed ``r x m`` batch, then unpack per prompt."""
    _check_tokens(weights, prompts)
    batch = tensorize(prompts, plan, layout)
    out = forward(weights, batch.tokens, batch.positions, batch.mask, counter)
    return unpack(weights, out, plan)


def prefill_full_batch(
    weights: Weights,
    prompts: Sequence[PromptRecord],
    counter: AttentionCounter | None = None,
) -> PrefillResult:
    """Right-pad every prompt to the batch maximum and prefill ``k x m`` rows.

    Pads are masked out of attention, positions run ``0..len-1`` per prompt,
    and pad entries are stripped from the returned caches.
    """
    _check_tokens(weights, prompts)
    plan = identity_plan([p.length for p in prompts])
    return prefill_prepacked(weights, prompts, plan, counter=counter)


def prefill_single(weights: Weights, prompt: PromptRecord) -> PrefillResult:
    """Prefill one prompt with no padding and a plain causal mask."""
    _check_tokens(weights, [prompt])
    n = prompt.length
    tokens = np.asarray(prompt.tokens, dtype=np.int64)[None]
    out = forward(weights, tokens, np.arange(n)[None], np.tri(n, dtype=bool)[None])
    return unpack(weights, out, identity_plan([n]))


def decode_step(
    weights: Weights, caches: KVCacheSet, next_tokens: Sequence[int]
) -> tuple[np.ndarray, KVCacheSet]:
    """Feed one token per prompt at position ``next_position`` and extend its cache.

    Returns ``(logits, caches)`` where ``logits`` is ``(k, vocab)``. The input
    caches are left untouched.
    """
    cfg = weights.config
    if len(next_tokens) != len(caches):
        raise ShapeMismatch(f"{len(next_tokens)} tokens for {len(caches)} caches")
    H, hd = cfg.n_heads, cfg.head_dim
    scale = DTYPE(1.0 / np.sqrt(hd))
    logits = np.empty((len(caches), cfg.vocab_size), dtype=DTYPE)
    updated = []
    for i, (tok, cache) in enumerate(zip(next_tokens, caches)):
        if not 0 <= int(tok) < cfg.vocab_size:
            raise InvalidPrompt(f"next token {tok} outside [0, {cfg.vocab_size})")
        pos = cache.next_position
        cos, sin = _rope_tables(np.array([pos]), hd)
        x = weights.embed[int(tok)][None]  # (1, d)
        new_keys, new_values = [], []
        for layer, k_cache, v_cache in zip(weights.layers, cache.keys, cache.values):
            h = _rms_norm(x, layer.attn_norm)
            q = _apply_rope((h @ layer.w_q).reshape(1, H, hd), cos, sin)
            k = _apply_rope((h @ layer.w_k).reshape(1, H, hd), cos, sin)
            v = (h @ layer.w_v).reshape(1, H, hd)
            k_all = np.concatenate([k_cache, k])
            v_all = np.concatenate([v_cache, v])
            new_keys.append(k_all)
            new_values.append(v_all)
            scores = np.einsum("qhd,nhd->hqn", q, k_all) * scale  # (H, 1, n+1)
            probs = _softmax_(scores)
            attn = np.einsum("hqn,nhd->qhd", probs, v_all).reshape(1, cfg.d_model)
            x = x + attn @ layer.w_o
            h = _rms_norm(x, layer.ffn_norm)
            x = x + _gelu(h @ layer.w_up) @ layer.w_down
        logits[i] = (_rms_norm(x, weights.final_norm) @ weights.lm_head)[0]
        updated.append(PromptCache(new_keys, new_values, pos + 1))
    return logits, KVCacheSet(updated)
