"""streamkit: sentence-streamed reasoning over incrementally arriving input.

The package models a decoder that starts reasoning while its input is still
arriving sentence by sentence. It provides the attention masks and grouped
rotary positions that make streamed and offline computation agree, a dual
KV-cache decode engine with a gated scheduler, an analytic latency model with
replayable reference measurements, and a trace quality pipeline (granularity,
consistency, two-attempt filtering, depth interventions).
"""

from .engine import (
    ArrivalSchedule,
    CacheMode,
    DeadlockError,
    DualKvState,
    StreamingEngine,
    StreamResult,
    batch_oracle_forward,
    run_streaming_decode,
    run_threaded_decode,
)
from .latency import (
    ArrivalModel,
    ComparisonTable,
    DecodeModel,
    LatencyReport,
    ParadigmKind,
    StreamProfile,
    TailTokens,
    compare,
    fit_decode_rate,
    load_reference_data,
    reference_profile,
    replay_ttft_reductions,
    simulate,
    ttft_tokens,
)
from .layout import (
    AlignmentError,
    AlignmentMap,
    DepthLevel,
    InputOrder,
    MarkerVocab,
    DEFAULT_MARKERS,
    SegmentLayout,
    SegmentationPolicy,
    SentenceUnit,
    Stream,
    Token,
    TokenKind,
    build_alignment,
    parse_marked_text,
    segment_text,
    split_sentences,
    validate_layout,
)
from .masks import (
    MaskMatrix,
    MaskMode,
    causal_mask,
    compare_literal_segment,
    streaming_mask_literal,
    streaming_mask_segment,
    visible_set,
)
from .model import (
    ModelConfig,
    SamplerConfig,
    SamplerMode,
    forward,
    init_weights,
    next_token,
    weights_checksum,
)
from .pipeline import (
    PassAt2Result,
    QualityReport,
    QualityThresholds,
    consistency_scores,
    depth_intervention,
    evaluate,
    granularity_score,
    pass_at_2_filter,
    similarity_map,
)
from .providers import (
    LocalHashEmbedder,
    ProviderError,
    RemoteEmbeddingClient,
    RemoteGenerationClient,
    StubGenerationClient,
)
from .rope import Grouping, RotaryConfig, attention_score, grouped_positions, rotate
from .session import SessionFormatError, SessionMeta, load_session, save_session

__version__ = "0.1.0"

__all__ = [
    "ArrivalModel",
    "ArrivalSchedule",
    "AlignmentError",
    "AlignmentMap",
    "CacheMode",
    "ComparisonTable",
    "DEFAULT_MARKERS",
    "DeadlockError",
    "DecodeModel",
    "DepthLevel",
    "DualKvState",
    "Grouping",
    "InputOrder",
    "LatencyReport",
    "LocalHashEmbedder",
    "MarkerVocab",
    "MaskMatrix",
    "MaskMode",
    "ModelConfig",
    "ParadigmKind",
    "PassAt2Result",
    "ProviderError",
    "QualityReport",
    "QualityThresholds",
    "RemoteEmbeddingClient",
    "RemoteGenerationClient",
    "RotaryConfig",
    "SamplerConfig",
    "SamplerMode",
    "SegmentLayout",
    "SegmentationPolicy",
    "SentenceUnit",
    "SessionFormatError",
    "SessionMeta",
    "Stream",
    "StreamProfile",
    "StreamResult",
    "StreamingEngine",
    "StubGenerationClient",
    "TailTokens",
    "Token",
    "TokenKind",
    "attention_score",
    "batch_oracle_forward",
    "build_alignment",
    "causal_mask",
    "compare",
    "compare_literal_segment",
    "consistency_scores",
    "depth_intervention",
    "evaluate",
    "fit_decode_rate",
    "forward",
    "granularity_score",
    "grouped_positions",
    "init_weights",
    "load_reference_data",
    "load_session",
    "next_token",
    "parse_marked_text",
    "pass_at_2_filter",
    "reference_profile",
    "replay_ttft_reductions",
    "rotate",
    "run_streaming_decode",
    "run_threaded_decode",
    "save_session",
    "segment_text",
    "similarity_map",
    "simulate",
    "split_sentences",
    "streaming_mask_literal",
    "streaming_mask_segment",
    "ttft_tokens",
    "validate_layout",
    "visible_set",
    "weights_checksum",
]
