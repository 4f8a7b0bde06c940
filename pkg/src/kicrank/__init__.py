"""kicrank: knowledge-graph link prediction with an embedding retriever
and LLM re-ranking of the top-m candidates."""

from .config import AblationFlags, RunConfig, derive_seed, dump_config, load_config
from .demonstrations import (
    CorpusStats,
    DemonstrationSet,
    bm25_score,
    build_analogy_pool,
    build_demonstrations,
    build_supplement_pool,
    order_analogy,
    order_supplement,
)
from .evaluation import (
    EvalReport,
    QueryResult,
    aggregate_metrics,
    filtered_rank,
    longtail_report,
    random_baseline_mrr,
    rerank_merge,
    retriever_only_metrics,
    run_pipeline,
)
from .gateway import Gateway, GatewayConfig, GatewayError, oracle_tables
from .kg import (
    HEAD_MISSING,
    TAIL_MISSING,
    KnowledgeGraph,
    Query,
    Triple,
    known_answers,
    load_dataset,
    make_queries,
)
from .prompting import (
    Conversation,
    ParseOutcome,
    PromptConfig,
    build_alignment_prompt,
    build_conversation,
    estimate_tokens,
    parse_alignment_response,
    parse_score_response,
    parse_sort_response,
    rerank_candidates,
)
from .retriever import (
    Ranking,
    RetrieverModel,
    TrainConfig,
    initialize_model,
    load_model,
    rank_all,
    save_model,
    score,
    train,
)
from .verbalizer import (
    AlignedTemplate,
    Verbalizer,
    load_aligned_templates,
    save_aligned_templates,
    verbalize_query,
    verbalize_relation,
    verbalize_triple,
)

__version__ = "0.1.0"
