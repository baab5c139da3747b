"""Prepacking: bin-packed prefilling of variable-length prompts.

Prompts are packed into fixed-capacity rows with First-Fit Decreasing, each
row gets a block-diagonal causal mask and positions that restart at every
prompt, and one forward pass yields per-prompt KV caches identical to those
of padded full batching.
"""

from prepack.cost import (
    BatchStats,
    CostReport,
    LinearFit,
    batch_stats,
    cost_for_lengths,
    cost_full_batching,
    cost_prepacked,
    fit_linear_regression,
    predicted_speedup,
)
from prepack.errors import (
    CapacityTooSmall,
    DegenerateInput,
    EmptyInput,
    InvalidConfig,
    InvalidPrompt,
    PlanMismatch,
    PrepackError,
    ShapeMismatch,
)
from prepack.layout import (
    AttentionLayout,
    UnpackEntry,
    build_independent_mask,
    build_layout,
    build_restart_positions,
    build_unpack_index,
)
from prepack.model import (
    AttentionCounter,
    KVCacheSet,
    ModelConfig,
    PrefillResult,
    Weights,
    attention_scores,
    decode_step,
    init_model,
    load_weights,
    prefill_full_batch,
    prefill_prepacked,
    prefill_single,
    save_weights,
)
from prepack.packing import (
    PackingPlan,
    PromptRecord,
    Segment,
    default_capacity,
    dumps_plan,
    ffd_pack,
    full_batch_padding,
    loads_plan,
    plan_padding,
    read_plan,
    write_plan,
)

__version__ = "0.1.0"
