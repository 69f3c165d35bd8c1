"""Iterative query-rewrite pipeline for delivery-search recall.

Generation prompts with query-frequency-aware explanations and associated
restaurant/cuisine context, a pluggable completion gateway with a
deterministic mock, a multi-channel retrieval simulator with click replay
and per-rewrite signal attribution, builders for the three post-training
sample types, offline evaluation (coverage, relevance rate, recall@K), and
a CLI orchestrating the whole loop.
"""

from .models import (
    EmptyTextError,
    FrequencyClass,
    FrequencyThresholds,
    Item,
    ItemKind,
    Query,
    RagContext,
    RewriteDirection,
    RewriteRecord,
    RewriteState,
    SearchIntent,
    SourceKind,
    classify_frequency,
    normalize_text,
)
from .prompting import (
    GenerationOutput,
    GenerationRequest,
    PromptBundle,
    build_generation_prompt,
    category_explanation,
    parse_generation_output,
    render_generation_output,
)
from .gateway import (
    AuxLabel,
    AuxTask,
    CompletionParams,
    EndpointKind,
    LlmGateway,
    ModelEndpoint,
)
from .simulate import (
    Channel,
    ChannelKind,
    ExposureEvent,
    RetrievalResult,
    expose_with_replay,
    merge_and_attribute,
    retrieve_embedding,
    retrieve_lexical,
)
from .signals import (
    SignalLabel,
    SignalLevel,
    Vocabulary,
    carryover_filter,
    dedup_and_stats,
    label_signals,
    update_vocabulary,
)
from .training import TrainingSample, TaskType
from .evaluation import (
    EvalReport,
    HashEmbedder,
    embed,
    precision_coverage,
    recall_at_k,
    relevance_rate,
)

__version__ = "0.1.0"
