"""Randomised equivalence check: prepacked prefill against padded full batching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from prepack.layout import AttentionLayout, build_causal_mask, build_layout
from prepack.model import (
    KVCacheSet,
    ModelConfig,
    Weights,
    decode_step,
    init_model,
    prefill_full_batch,
    prefill_prepacked,
)
from prepack.packing import PromptRecord, ffd_pack

TOLERANCE = 1e-4


def max_cache_deviation(a: KVCacheSet, b: KVCacheSet) -> float:
    """Largest elementwise gap between two cache sets; ``inf`` if shapes differ."""
    if len(a) != len(b):
        return float("inf")
    worst = 0.0
    for ca, cb in zip(a, b):
        if ca.next_position != cb.next_position:
            return float("inf")
        for xa, xb in zip(ca.keys + ca.values, cb.keys + cb.values):
            if xa.shape != xb.shape:
                return float("inf")
            worst = max(worst, float(np.max(np.abs(xa - xb))))
    return worst


def random_prompts(rng: np.random.Generator, n: int, max_len: int, vocab: int) -> list[PromptRecord]:
    lengths = rng.integers(1, max_len + 1, n)
    return [PromptRecord(i, tuple(rng.integers(0, vocab, int(l)).tolist())) for i, l in enumerate(lengths)]


@dataclass
class VerifyReport:
    trials: int
    max_deviation: float
    argmax_mismatches: int
    decode_mismatches: int
    failed_trials: list[int]
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return not self.failed_trials


def verify_equivalence(
    weights: Weights | ModelConfig | None = None,
    trials: int = 100,
    seed: int = 0,
    *,
    batch_size: int = 8,
    max_len: int = 64,
    tolerance: float = TOLERANCE,
    corrupt_mask: bool = False,
) -> VerifyReport:
    """Compare caches, first tokens and one decode step across both prefill paths.

    Each trial draws ``batch_size`` prompts with lengths uniform on
    ``1..max_len``. ``corrupt_mask`` swaps the independent mask for a plain
    causal one over each bin, which should make the check fail.
    """
    if weights is None:
        weights = ModelConfig()
    if isinstance(weights, ModelConfig):
        weights = init_model(weights)
    vocab = weights.config.vocab_size
    rng = np.random.default_rng(seed)
    worst, argmax_bad, decode_bad, failed = 0.0, 0, 0, []
    for t in range(trials):
        prompts = random_prompts(rng, batch_size, max_len, vocab)
        plan = ffd_pack([p.length for p in prompts])
        layout = build_layout(plan)
        if corrupt_mask:
            layout = AttentionLayout(build_causal_mask(plan), layout.positions, layout.valid)
        full = prefill_full_batch(weights, prompts)
        packed = prefill_prepacked(weights, prompts, plan, layout)

        dev = max_cache_deviation(full.caches, packed.caches)
        first_full, first_packed = full.first_tokens(), packed.first_tokens()
        n_argmax = int(np.sum(first_full != first_packed))
        logits_full, _ = decode_step(weights, full.caches, first_full)
        logits_packed, _ = decode_step(weights, packed.caches, first_full)
        n_decode = int(np.sum(logits_full.argmax(-1) != logits_packed.argmax(-1)))

        worst = max(worst, dev)
        argmax_bad += n_argmax
        decode_bad += n_decode
        if dev > tolerance or n_argmax or n_decode:
            failed.append(t)
    return VerifyReport(trials, worst, argmax_bad, decode_bad, failed, tolerance)
