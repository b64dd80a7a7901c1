"""Corpus provenance auditing for language models.

Two complementary instruments: an ablation study that unlearns a target
corpus from a trainable model and measures the before/after effect on task
performance, and a leakage study that probes whether published statistics are
recallable from a model. Everything runs offline from persisted corpora and
fixtures except the CommonCrawl client and remote model backends.
"""

from .codes import CodeClass, CodeLabel, code_class, palette, parse_code, parse_codes
from .corpus import (
    Chunk,
    Corpus,
    CorpusError,
    CorpusRole,
    Document,
    build_corpus,
    chunk_document,
    load_corpus,
    load_documents,
    save_corpus,
    save_documents,
    whitespace_tokenize,
)
from .html_clean import NoExtractableTextError, clean_html
from .models import (
    BackendUnavailableError,
    Capability,
    CapabilityError,
    ContextOverflowError,
    CrossEntropyTerm,
    GenerationParams,
    KLDivergenceTerm,
    ModelHandle,
    ModelKind,
    NumericalDivergenceError,
    ScriptedModel,
    SplicedCrossEntropyTerm,
    apply_gradient_step,
    generate,
    next_token_distributions,
    remote_handle,
    scripted_handle,
    sequence_loss,
    spliced_sequence_loss,
)
from .tinylm import ScalarToyModel, TinyEmbeddingLM, load_model, save_model, trainable_handle
from .unlearn import (
    ObjectiveComponents,
    StepReport,
    UnlearningConfig,
    UnlearningRun,
    compare_checkpoints,
    mean_safe_kl,
    run_unlearning,
    unlearning_objective,
)
from .evaluation import (
    Phase,
    Query,
    ResponseRecord,
    compose_ground_truth,
    load_queries,
    load_responses,
    run_evaluation,
    save_queries,
    save_responses,
    validate_query_set,
)
from .coding import (
    Annotation,
    ControlCheck,
    ErrorTally,
    GroupBy,
    QueryDifference,
    ResponseKey,
    ablation_effect,
    load_annotations,
    save_annotations,
    tally,
)
from .correlation import (
    CorrelationResult,
    PrevalenceScore,
    load_prevalence,
    pair_differences_with_prevalence,
    prevalence_correlation,
)
from .leakage import (
    ModelFamily,
    Outcome,
    ProbeMode,
    ProbeOutcome,
    ProbeSpec,
    ResultMatrix,
    StatisticRecord,
    ValueComparator,
    classify,
    extract_value,
    load_records,
    render_instruct_probe,
    render_prompt,
    run_matrix,
    save_records,
)

__version__ = "0.1.0"
