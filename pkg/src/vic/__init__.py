"""Vote-in-context retrieval: duplicate-aware candidate assembly, grid
serialization of videos, list-wise reranking and fusion baselines."""

from .assembly import AssemblyConfig, multiplicity, per_list_depth, round_robin
from .core import (
    CandidateSequence,
    ConfigError,
    CorpusManifest,
    FormatError,
    ItemId,
    PERM_CLEAN,
    PERM_IDENTITY_FALLBACK,
    PERM_REPAIRED,
    Permutation,
    QueryId,
    RankedList,
    RunEntry,
    ScoreMatrix,
    Slot,
    VicError,
    VideoEntry,
    load_manifest,
    load_run_file,
    load_score_matrix,
    ranked_from_scores,
    score_matrix_from_runs,
    write_run_file,
)
from .evaluation import (
    EvalReport,
    ExperimentConfig,
    QueryOutcome,
    SourceSpec,
    dedup_ranked,
    emit_report,
    recall_at,
    run_experiment,
)
from .fusion import FusionWeights, RrfConfig, comb_mnz, comb_sum, minmax_normalize, rrf
from .reranker import (
    Backend,
    BackendConfig,
    HttpChatBackend,
    IdentityBackend,
    MockOracleBackend,
    PromptBundle,
    RerankResult,
    apply,
    build_prompt,
    gold_relevance,
    parse_permutation,
    rerank,
    rerank_many,
)
from .sgrid import (
    FrameSource,
    GridSpec,
    GridStore,
    SGrid,
    compose_grid,
    load_frames,
    load_sgrid,
    save_sgrid,
    select_indices,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
