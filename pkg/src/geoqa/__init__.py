"""geoqa: natural-language querying of structured geo-accessibility data.

The pieces, in pipeline order: a queryable accessibility store, the embedded
API-call grammar with streaming interception, generation backends and the
pause-execute-resume loop, a synthetic QA dataset builder, the metric suite
(ROUGE-L, BLEU-4, exact match) with corpus reports, and an HTTP query service
with guardrails and caching.
"""

from .adapter import (
    BackendUnavailable,
    GenerationRequest,
    LoopOutcome,
    MockBackend,
    RemoteBackend,
    generate_stream,
    run_tool_loop,
)
from .datagen import (
    QAPair,
    QuestionTemplate,
    SplitSpec,
    enumerate_projections,
    generate_answer,
    generate_dataset,
    instantiate,
    load_schema,
    load_templates,
    paraphrase,
    split_and_export,
)
from .evaluation import (
    ErrorClass,
    EvalExample,
    EvalReport,
    classify_error,
    evaluate_corpus,
)
from .metrics import bleu_4, exact_match, lcs_length, rouge_l, score_pair
from .protocol import (
    AnnotatedText,
    StreamScanner,
    ToolCall,
    ToolResult,
    default_registry,
    parse_annotated,
    parse_call,
    scan_stream,
    serialize_call,
    validate_call,
)
from .service import (
    QueryRequest,
    QueryService,
    ResponseCache,
    ServiceConfig,
    build_service,
    create_app,
    guardrail_check,
    load_config,
)
from .store import (
    AccessRecord,
    Category,
    ClosestResult,
    GazetteerEntry,
    GeoPoint,
    Store,
    TravelMode,
    build_executor,
    execute_call,
    haversine_km,
    ingest,
)

__version__ = "0.1.0"
